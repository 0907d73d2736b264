"""Machine-readable report files.

Every report is a CSV whose first line records the tool version and the
config hash, so identical configs reproduce bytewise-identical files; no
report embeds timestamps or host details.
"""

from __future__ import annotations

import csv
import hashlib
import json
from contextlib import contextmanager
from pathlib import Path
from typing import Sequence

from cogload.analysis import (
    ResponseTimeTable,
    SourceTargetCorrelations,
    SurveyBurdenRow,
    round_half_up,
)
from cogload.protocols import AggregateMetrics, RunMetrics

EXCLUDED_MARK = "X"

_PROTOCOL_ORDER = {"vanilla": 0, "pretrained": 1}


def config_sha256(config: dict) -> str:
    """Hash of the canonical JSON form of a config mapping."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def provenance_line(config_hash: str) -> str:
    from cogload import __version__

    return f"# cogload {__version__} config_sha256={config_hash}"


@contextmanager
def _report(path: str | Path, config_hash: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(provenance_line(config_hash) + "\n")
        yield csv.writer(fh, lineterminator="\n")


def _fmt(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def _column_key(protocol: str, window_len_s: float) -> tuple:
    return (_PROTOCOL_ORDER.get(protocol, 99), protocol, window_len_s)


def write_f1_summary(
    aggregates: AggregateMetrics, path: str | Path, config_hash: str
) -> Path:
    """Per-subject mean/std F1 table: one row per subject plus a mean row."""
    columns = sorted(aggregates.columns(), key=lambda c: _column_key(*c))
    header = ["subject"]
    for protocol, window in columns:
        stem = f"{protocol}_{window:g}s"
        header += [f"{stem}_mean", f"{stem}_std", f"{stem}_runs"]
    with _report(path, config_hash) as writer:
        writer.writerow(header)
        for subject in aggregates.subjects():
            row = [subject]
            for protocol, window in columns:
                cell = aggregates.cell(subject, protocol, window)
                if cell is None:
                    row += ["", "", ""]
                else:
                    row += [_fmt(cell.mean_f1), _fmt(cell.std_f1), str(cell.n_runs)]
            writer.writerow(row)
        mean_row = ["mean"]
        for column in columns:
            mean_row += [_fmt(aggregates.grand_means[column]), "", ""]
        writer.writerow(mean_row)
    return Path(path)


def write_survey_burden(
    rows: Sequence[SurveyBurdenRow], path: str | Path, config_hash: str
) -> Path:
    """Survey-burden table; excluded subjects carry the literal X.

    Presentation percentages are integers (half-up); the raw float columns
    keep the unrounded values.
    """
    with _report(path, config_hash) as writer:
        writer.writerow(
            [
                "subject", "session", "variant", "calibration_f1",
                "cogload_pct", "stress_pct", "cogload_pct_raw", "stress_pct_raw",
            ]
        )
        for row in rows:
            writer.writerow(
                [
                    row.subject_id,
                    row.session_id,
                    "gamified" if row.gamified else "plain",
                    _fmt(row.calibration_f1),
                    EXCLUDED_MARK if row.excluded else str(row.cogload_pct_int()),
                    str(row.stress_pct_int()),
                    "" if row.excluded else _fmt(row.cogload_pct),
                    _fmt(row.stress_pct),
                ]
            )
    return Path(path)


def write_transfer_scatter(
    metrics: Sequence[RunMetrics], path: str | Path, config_hash: str
) -> Path:
    """One row per fine-tuned model: source stress F1s vs target test F1."""
    with _report(path, config_hash) as writer:
        writer.writerow(
            [
                "run_id", "test_subject", "window_len_s",
                "source_train_f1", "source_val_f1", "source_test_f1",
                "target_test_f1",
            ]
        )
        for m in sorted(metrics, key=lambda m: (m.window_len_s, m.sort_key)):
            if m.failed or m.source_metrics is None:
                continue
            writer.writerow(
                [
                    str(m.fold.run_id),
                    m.fold.test_subject,
                    f"{m.window_len_s:g}",
                    _fmt(m.source_metrics.train_f1),
                    _fmt(m.source_metrics.val_f1),
                    _fmt(m.source_metrics.test_f1),
                    _fmt(m.test_f1),
                ]
            )
    return Path(path)


def write_transfer_correlations(
    correlations: SourceTargetCorrelations, path: str | Path, config_hash: str
) -> Path:
    with _report(path, config_hash) as writer:
        writer.writerow(
            ["source_split", "scope", "granularity", "n", "r", "p", "t_stat", "df", "error"]
        )
        for record in correlations.records:
            if record.stats is None:
                writer.writerow(
                    [record.source_split, record.scope, record.granularity,
                     "", "", "", "", "", record.error or ""]
                )
            else:
                s = record.stats
                writer.writerow(
                    [record.source_split, record.scope, record.granularity,
                     str(s.n), _fmt(s.r), _fmt(s.p_value), _fmt(s.t_stat), str(s.df), ""]
                )
    return Path(path)


def write_leakage_report(
    leakage: dict[tuple[str, str], float], path: str | Path, config_hash: str
) -> Path:
    """Stress percentages per pilot (subject, condition)."""
    with _report(path, config_hash) as writer:
        writer.writerow(["subject", "condition", "stress_pct", "stress_pct_raw"])
        for (subject, condition), pct in leakage.items():
            writer.writerow([subject, condition, str(round_half_up(pct)), _fmt(pct)])
    return Path(path)


def write_response_time_summary(
    table: ResponseTimeTable, path: str | Path, config_hash: str
) -> Path:
    with _report(path, config_hash) as writer:
        writer.writerow(["variant", "mean_question_s", "n_questions"])
        writer.writerow(["gamified", _fmt(table.mean_gamified_s), str(table.n_gamified)])
        writer.writerow(["plain", _fmt(table.mean_non_gamified_s), str(table.n_non_gamified)])
    return Path(path)


def write_response_time_positions(
    table: ResponseTimeTable, path: str | Path, config_hash: str
) -> Path:
    """Per-question-position mean duration difference (plain minus gamified)."""
    with _report(path, config_hash) as writer:
        writer.writerow(["position", "mean_diff_s", "n_sessions"])
        for diff in table.position_differences:
            writer.writerow([str(diff.position), _fmt(diff.mean_diff_s), str(diff.n_sessions)])
    return Path(path)
