"""Dataset files, generation manifests and index snapshots.

Dense format (one point per line)::

    # mask-dense v1 dim=2 labeled=1
    0.5,1.25,cat
    ...

Sparse format (one element per line, indices 0-based, ascending)::

    # mask-sparse v1 dim=5000 labeled=1
    17 earn 3:0.25 40:1.5
    ...

Without a header the dense reader treats a trailing field that does not parse
as a number as the label; the sparse reader requires the header for ``dim``.
Integer-looking labels are read back as ints.

Index snapshots are ``.npz`` archives holding only numeric arrays plus one
JSON metadata string, loaded with ``allow_pickle=False``.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Hashable, Optional

import numpy as np
import scipy.sparse as sp

from .core import Dataset, Metric
from .index import BuildParams, CentroidLayer, MultilevelIndex

DENSE_MAGIC = "# mask-dense v1"
SPARSE_MAGIC = "# mask-sparse v1"
SNAPSHOT_VERSION = 1


class FormatError(ValueError):
    """A data file or snapshot does not follow its declared format."""


def _header_fields(line: str) -> dict[str, str]:
    out = {}
    for tok in line.split()[3:]:
        if "=" in tok:
            k, v = tok.split("=", 1)
            out[k] = v
    return out


def _parse_label(tok: str) -> Hashable:
    try:
        return int(tok)
    except ValueError:
        return tok


def _check_label(label) -> str:
    s = str(label)
    if not s or any(ch.isspace() for ch in s) or "," in s or ":" in s:
        raise FormatError(f"label {label!r} cannot be written (empty, whitespace, ',' or ':')")
    return s


def _is_number(tok: str) -> bool:
    try:
        float(tok)
        return True
    except ValueError:
        return False


# -- dense -----------------------------------------------------------------

def write_dense(dataset: Dataset, path) -> None:
    if dataset.sparse:
        raise FormatError("dense format needs dense points; use write_sparse")
    labeled = dataset.labels is not None
    with open(path, "w") as fh:
        fh.write(f"{DENSE_MAGIC} dim={dataset.dim} labeled={int(labeled)}\n")
        for i, row in enumerate(dataset.points):
            fields = [repr(float(x)) for x in row]
            if labeled:
                fields.append(_check_label(dataset.labels[i]))
            fh.write(",".join(fields) + "\n")


def read_dense(path) -> Dataset:
    """Read a dense point file; element ids are line ordinals starting at 0."""
    labeled: Optional[bool] = None
    dim: Optional[int] = None
    points, labels = [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith(DENSE_MAGIC):
                    hdr = _header_fields(line)
                    if "labeled" in hdr:
                        labeled = hdr["labeled"] == "1"
                    if "dim" in hdr:
                        dim = int(hdr["dim"])
                continue
            fields = [f.strip() for f in line.split(",")]
            if labeled is None:
                labeled = not _is_number(fields[-1])
            if labeled:
                labels.append(_parse_label(fields[-1]))
                fields = fields[:-1]
            try:
                vals = [float(f) for f in fields]
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric coordinate") from None
            if dim is None:
                dim = len(vals)
            if len(vals) != dim:
                raise FormatError(f"{path}:{lineno}: expected {dim} coordinates, got {len(vals)}")
            points.append(vals)
    if not points:
        raise FormatError(f"{path}: no points")
    return Dataset(np.array(points), labels=labels if labeled else None,
                   meta={"source": str(path)})


# -- sparse ----------------------------------------------------------------

def write_sparse(dataset: Dataset, path) -> None:
    pts = dataset.points if dataset.sparse else sp.csr_matrix(dataset.points)
    labeled = dataset.labels is not None
    with open(path, "w") as fh:
        fh.write(f"{SPARSE_MAGIC} dim={dataset.dim} labeled={int(labeled)}\n")
        for i in range(len(dataset)):
            lo, hi = pts.indptr[i], pts.indptr[i + 1]
            fields = [str(int(dataset.ids[i]))]
            if labeled:
                fields.append(_check_label(dataset.labels[i]))
            fields += [f"{int(j)}:{float(v)!r}" for j, v in zip(pts.indices[lo:hi], pts.data[lo:hi])]
            fh.write(" ".join(fields) + "\n")


def read_sparse(path) -> Dataset:
    dim = labeled = None
    ids, labels, data, indices, indptr = [], [], [], [], [0]
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith(SPARSE_MAGIC):
                    hdr = _header_fields(line)
                    dim = int(hdr["dim"]) if "dim" in hdr else None
                    labeled = hdr.get("labeled", "0") == "1"
                continue
            if dim is None:
                raise FormatError(f"{path}: missing '{SPARSE_MAGIC} dim=N' header")
            toks = line.split()
            try:
                ids.append(int(toks[0]))
            except ValueError:
                raise FormatError(f"{path}:{lineno}: bad element id {toks[0]!r}") from None
            rest = toks[1:]
            if labeled:
                if not rest:
                    raise FormatError(f"{path}:{lineno}: missing label")
                labels.append(_parse_label(rest[0]))
                rest = rest[1:]
            prev = -1
            for tok in rest:
                try:
                    j, v = tok.split(":", 1)
                    j, v = int(j), float(v)
                except ValueError:
                    raise FormatError(f"{path}:{lineno}: bad entry {tok!r}") from None
                if not 0 <= j < dim:
                    raise FormatError(f"{path}:{lineno}: index {j} outside dim {dim}")
                if j <= prev:
                    raise FormatError(f"{path}:{lineno}: indices must be strictly increasing")
                prev = j
                indices.append(j)
                data.append(v)
            indptr.append(len(indices))
    if not ids:
        raise FormatError(f"{path}: no elements")
    mat = sp.csr_matrix((np.array(data, dtype=np.float64), np.array(indices, dtype=np.int64),
                         np.array(indptr, dtype=np.int64)), shape=(len(ids), dim))
    return Dataset(mat, np.array(ids), labels if labeled else None, {"source": str(path)})


def read_dataset(path) -> Dataset:
    """Dispatch on the header line: sparse files must carry the sparse magic."""
    with open(path) as fh:
        for raw in fh:
            if raw.strip():
                first = raw.strip()
                break
        else:
            raise FormatError(f"{path}: empty file")
    return read_sparse(path) if first.startswith(SPARSE_MAGIC) else read_dense(path)


def write_manifest(artifact, payload: dict) -> Path:
    """Write ``<artifact>.manifest.json`` recording how the artifact was made."""
    path = Path(str(artifact) + ".manifest.json")
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


# -- index snapshots -------------------------------------------------------

def _pack(arrs: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    ptr = np.zeros(len(arrs) + 1, dtype=np.int64)
    ptr[1:] = np.cumsum([len(a) for a in arrs]) if arrs else []
    flat = np.concatenate(arrs).astype(np.int64) if arrs else np.empty(0, dtype=np.int64)
    return ptr, flat


def _unpack(ptr: np.ndarray, flat: np.ndarray) -> list[np.ndarray]:
    return [flat[ptr[i]:ptr[i + 1]].copy() for i in range(len(ptr) - 1)]


def _jsonable(label):
    return label.item() if isinstance(label, np.generic) else label


def save_index(index: MultilevelIndex, path) -> None:
    """Snapshot ``index`` to ``path`` (``.npz``); custom metrics cannot be saved."""
    if index.metric.kind == "custom":
        raise ValueError("an index with a custom metric cannot be saved")
    p = index.params
    meta = {
        "format": "mask-index",
        "version": SNAPSHOT_VERSION,
        "params": {"length_group": p.length_group, "n_centroids": p.n_centroids,
                   "seed": p.seed, "max_iter": p.max_iter, "tol": p.tol},
        "metric": index.metric.kind,
        "depth": index.depth,
        "sparse": bool(sp.issparse(index.points)),
        "labels": None if index.labels is None else [_jsonable(x) for x in index.labels],
    }
    arrays = {"ids": index.ids, "inserted": np.array(sorted(index.inserted), dtype=np.int64)}
    if sp.issparse(index.points):
        pts = sp.csr_matrix(index.points)
        arrays.update(points_data=pts.data, points_indices=pts.indices,
                      points_indptr=pts.indptr, points_shape=np.array(pts.shape))
    else:
        arrays["points"] = index.points
    for li, layer in enumerate(index.layers):
        arrays[f"l{li}_centroids"] = layer.centroids
        for name in ("groups", "members", "labels", "children"):
            ptr, flat = _pack(getattr(layer, name))
            arrays[f"l{li}_{name}_ptr"], arrays[f"l{li}_{name}"] = ptr, flat
    with open(path, "wb") as fh:
        np.savez_compressed(fh, meta=np.array(json.dumps(meta)), **arrays)


def load_index(path) -> MultilevelIndex:
    with np.load(path, allow_pickle=False) as z:
        try:
            meta = json.loads(str(z["meta"]))
        except KeyError:
            raise FormatError(f"{path}: not an index snapshot") from None
        if meta.get("format") != "mask-index":
            raise FormatError(f"{path}: not an index snapshot")
        if meta.get("version") != SNAPSHOT_VERSION:
            raise FormatError(f"{path}: unsupported snapshot version {meta.get('version')}")
        if meta["sparse"]:
            points = sp.csr_matrix((z["points_data"], z["points_indices"], z["points_indptr"]),
                                   shape=tuple(z["points_shape"]))
        else:
            points = z["points"]
        layers = []
        for li in range(meta["depth"]):
            parts = {name: _unpack(z[f"l{li}_{name}_ptr"], z[f"l{li}_{name}"])
                     for name in ("groups", "members", "labels", "children")}
            layers.append(CentroidLayer(z[f"l{li}_centroids"], **parts))
        ids = z["ids"]
        inserted = z["inserted"].tolist()
    params = BuildParams(**meta["params"])
    return MultilevelIndex(params, Metric(meta["metric"]), points, ids, meta["labels"], layers,
                           inserted)
