"""
compare_sweeps.py
-----------------
Checks that two gain-sweep logs (JSONL, optionally .jsonl.gz) hold identical
records once sorted by sample index, e.g. runs of the same config at 1 and N
threads.

Usage:
    python helpers/compare_sweeps.py runs/t1/sweep.jsonl runs/t8/sweep.jsonl
    python helpers/compare_sweeps.py a.jsonl b.jsonl --max-examples 10
    python helpers/compare_sweeps.py a.jsonl b.jsonl --write-sorted
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from inverter_achievability.artifacts import compare_sweeps, sorted_sweep_lines, write_text  # noqa: E402


def sorted_output_path(path: Path) -> Path:
    name = path.name
    for suffix in (".jsonl.gz", ".jsonl"):
        if name.endswith(suffix):
            return path.with_name(f"{name[: -len(suffix)]}.sorted{suffix}")
    return path.with_name(f"{name}.sorted")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="Compare two sweep logs after sorting by sample index.")
    parser.add_argument("left", help="First sweep log.")
    parser.add_argument("right", help="Second sweep log.")
    parser.add_argument(
        "--max-examples",
        type=int,
        default=5,
        help="Max differing indices to print.",
    )
    parser.add_argument(
        "--write-sorted",
        action="store_true",
        help="Also write <name>.sorted.jsonl next to each input.",
    )
    args = parser.parse_args(argv)

    left, right = Path(args.left), Path(args.right)
    for path in (left, right):
        if not path.exists():
            print(f"File not found: {path}")
            return 1

    left_lines = sorted_sweep_lines(left)
    right_lines = sorted_sweep_lines(right)
    print(f"\n{left}: {len(left_lines)} gains")
    print(f"{right}: {len(right_lines)} gains")

    if args.write_sorted:
        for path, lines in ((left, left_lines), (right, right_lines)):
            out = write_text(sorted_output_path(path), "".join(line + "\n" for line in lines))
            print(f"  Sorted copy: {out}")

    differing = compare_sweeps(left, right)
    if differing:
        print(f"\n{len(differing)} records differ.")
        for index in differing[: args.max_examples]:
            print(f"    index {index}")
        return 1

    print("\nOK: sweeps are identical.")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
