"""
artifacts.py
------------
Output files. Everything is written to a temporary file in the destination
directory and moved into place with os.replace, so an interrupted run never
leaves a half-written file under the final name.

Sweep logs are JSON lines (optionally gzip-compressed), one gain per line.
"""

from __future__ import annotations

import gzip
import json
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Iterable, Iterator

import pandas as pd


def _is_gz(path: Path) -> bool:
    return path.suffix == ".gz"


@contextmanager
def atomic_path(path: str | Path) -> Iterator[Path]:
    """Yield a temporary sibling path; rename it onto `path` on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    os.close(fd)
    tmp_path = Path(tmp)
    try:
        yield tmp_path
        os.replace(tmp_path, path)
    finally:
        if tmp_path.exists():
            tmp_path.unlink()


def write_text(path: str | Path, text: str) -> Path:
    path = Path(path)
    with atomic_path(path) as tmp:
        if _is_gz(path):
            with gzip.open(tmp, "wt", encoding="utf-8") as handle:
                handle.write(text)
        else:
            tmp.write_text(text, encoding="utf-8")
    return path


def write_json(path: str | Path, payload) -> Path:
    return write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_jsonl(path: str | Path, records: Iterable[dict]) -> Path:
    lines = [json.dumps(record, sort_keys=True, separators=(",", ":")) for record in records]
    return write_text(path, "".join(line + "\n" for line in lines))


def write_csv(path: str | Path, frame: pd.DataFrame) -> Path:
    path = Path(path)
    with atomic_path(path) as tmp:
        frame.to_csv(tmp, index=False)
    return path


def open_jsonl(path: Path):
    if _is_gz(path):
        return gzip.open(path, "rt", encoding="utf-8")
    return path.open("r", encoding="utf-8")


def iter_jsonl(path: str | Path) -> Iterator[dict]:
    path = Path(path)
    with open_jsonl(path) as handle:
        for line_num, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{line_num}: not valid JSON ({exc.msg})") from exc


def sorted_sweep_lines(path: str | Path) -> list[str]:
    """Canonical lines of a sweep log, ordered by sample index."""
    records = sorted(iter_jsonl(path), key=lambda record: record["index"])
    return [json.dumps(record, sort_keys=True, separators=(",", ":")) for record in records]


def compare_sweeps(left: str | Path, right: str | Path) -> list[int]:
    """Indices whose records differ between two sweep logs (missing counts as different)."""
    a = {r["index"]: r for r in iter_jsonl(left)}
    b = {r["index"]: r for r in iter_jsonl(right)}
    return sorted(i for i in a.keys() | b.keys() if a.get(i) != b.get(i))
