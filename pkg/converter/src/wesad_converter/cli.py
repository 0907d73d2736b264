"""Command-line entry point: convert WESAD archives and write a JSON report."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from wesad_converter.convert import (
    ConverterError,
    convert_subject,
    discover_archives,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wesad-convert",
        description=(
            "Convert WESAD per-subject archives (SX.pkl) to per-subject "
            "wrist-BVP CSVs plus a JSON conversion report."
        ),
    )
    parser.add_argument(
        "archives",
        nargs="*",
        type=Path,
        help="subject archive files; may be combined with --wesad-root",
    )
    parser.add_argument(
        "--wesad-root",
        type=Path,
        help="root of the extracted WESAD distribution; discovers S*/S*.pkl",
    )
    parser.add_argument(
        "--out",
        type=Path,
        required=True,
        help="output directory for the CSVs and conversion_report.json",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    archives = list(args.archives)
    if args.wesad_root is not None:
        try:
            archives.extend(discover_archives(args.wesad_root))
        except FileNotFoundError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
    if not archives:
        parser.error("no archives given; pass paths or --wesad-root")

    reports = []
    for path in archives:  # archives are independent; converted one at a time
        try:
            report = convert_subject(path, args.out)
        except (ConverterError, FileNotFoundError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        print(
            f"{report.subject_id}: {report.rows_written} rows "
            f"-> {report.output_path}"
        )
        reports.append(report)

    report_path = args.out / "conversion_report.json"
    report_path.write_text(
        json.dumps([r.to_dict() for r in reports], indent=2) + "\n",
        encoding="utf-8",
    )
    print(f"report -> {report_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
