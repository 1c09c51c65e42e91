"""Collects one verdict line per acceptance criterion for the terminal summary."""

from __future__ import annotations

RESULTS: dict[int, str] = {}


def record(number: int, title: str, ok: bool, detail: str) -> bool:
    line = f"ACCEPTANCE {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    RESULTS[number] = line
    print(line)
    return ok
