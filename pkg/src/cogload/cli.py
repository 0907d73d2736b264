"""Command-line entry point.

Subcommands cover the full pipeline: ``vanilla`` (train from scratch on the
pilot recordings), ``pretrain`` (stress models on converted WESAD data),
``finetune`` (adapt the pretrained models on the pilot folds), ``survey``
(calibration matching plus survey burden percentages), ``response-times``,
and ``report`` (re-aggregate everything in the run ledgers).  All commands
are deterministic for a fixed config + seed; progress goes to stderr while
reports are plain files under the output directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from cogload.analysis import (
    CALIBRATION_WINDOW_LEN_S,
    burden_percentages,
    calibrate_subject,
    correlate_source_target,
    response_time_analysis,
    stress_leakage_check,
)
from cogload.data import (
    Condition,
    ParseError,
    SURVEY_CONDITIONS,
    ValidationError,
    load_manifest,
    load_wesad_dir,
)
from cogload.metrics import UndefinedCorrelationError
from cogload.nn import ChecksumError, ShapeError, TrainSpec
from cogload.protocols import (
    DEFAULT_RUNS,
    FINETUNE_LR,
    RunMetrics,
    VANILLA_LR,
    aggregate,
    best_source_entry,
    load_pool_index,
    pretrain_wesad,
    read_ledger,
    run_pretrained_protocol,
    run_vanilla,
    save_pool_index,
    sorted_subjects,
)
from cogload.reports import (
    config_sha256,
    write_f1_summary,
    write_leakage_report,
    write_response_time_positions,
    write_response_time_summary,
    write_survey_burden,
    write_transfer_correlations,
    write_transfer_scatter,
)
from cogload.windows import SUPPORTED_WINDOW_LENGTHS_S, validate_supported_window_len

logger = logging.getLogger(__name__)

_CONFIG_KEYS = {
    "pilot_manifest", "wesad_dir", "survey_manifest", "response_times_csv",
    "window_lens_s", "runs", "master_seed", "jobs", "out_dir",
    "train", "finetune", "gamified_surveys",
}
_TRAIN_KEYS = {"learning_rate", "max_epochs", "patience_epochs", "batch_size"}


@dataclass
class RunConfig:
    pilot_manifest: Path | None = None
    wesad_dir: Path | None = None
    survey_manifest: Path | None = None
    response_times_csv: Path | None = None
    window_lens_s: tuple[float, ...] = SUPPORTED_WINDOW_LENGTHS_S
    runs: int = DEFAULT_RUNS
    master_seed: int = 0
    jobs: int = 1
    out_dir: Path = Path("out")
    train: dict = field(default_factory=dict)
    finetune: dict = field(default_factory=dict)
    gamified_surveys: dict | None = None

    def __post_init__(self) -> None:
        if self.runs < 1:
            raise ValidationError(f"runs must be >= 1, got {self.runs}")
        if self.jobs < 1:
            raise ValidationError(f"jobs must be >= 1, got {self.jobs}")
        if not self.window_lens_s:
            raise ValidationError("at least one window length is required")
        for window in self.window_lens_s:
            validate_supported_window_len(window)
        for name, overrides in (("train", self.train), ("finetune", self.finetune)):
            unknown = set(overrides) - _TRAIN_KEYS
            if unknown:
                raise ValidationError(
                    f"unknown {name} config keys: {sorted(unknown)} "
                    f"(allowed: {sorted(_TRAIN_KEYS)})"
                )

    def train_spec(self) -> TrainSpec:
        return TrainSpec(**{"learning_rate": VANILLA_LR, **self.train})

    def finetune_spec(self) -> TrainSpec:
        merged = {"learning_rate": FINETUNE_LR, **self.train, **self.finetune}
        if "learning_rate" not in self.finetune and "learning_rate" in self.train:
            merged["learning_rate"] = FINETUNE_LR
        return TrainSpec(**merged)

    def experiment_hash(self) -> str:
        def spec_dict(spec: TrainSpec) -> dict:
            d = dataclasses.asdict(spec)
            d.pop("seed")  # per-fold seeds are derived from master_seed
            return d

        identity = {
            "pilot_manifest": _posix_or_none(self.pilot_manifest),
            "wesad_dir": _posix_or_none(self.wesad_dir),
            "survey_manifest": _posix_or_none(self.survey_manifest),
            "response_times_csv": _posix_or_none(self.response_times_csv),
            "window_lens_s": list(self.window_lens_s),
            "runs": self.runs,
            "master_seed": self.master_seed,
            "train": spec_dict(self.train_spec()),
            "finetune": spec_dict(self.finetune_spec()),
            "gamified_surveys": self.gamified_surveys,
        }
        return config_sha256(identity)

    def require(self, *names: str) -> None:
        for name in names:
            value = getattr(self, name)
            if value is None:
                raise ValidationError(
                    f"this command needs {name!r} set in the config file"
                )
            if not Path(value).exists():
                raise ValidationError(f"{name} path does not exist: {value}")


def _posix_or_none(path: Path | None) -> str | None:
    return None if path is None else Path(path).as_posix()


def load_config(args: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if args.config is not None:
        config_path = Path(args.config)
        if not config_path.exists():
            raise ValidationError(f"config file not found: {config_path}")
        try:
            raw = json.loads(config_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{config_path}: invalid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ParseError(f"{config_path}: config must be a JSON object")
        unknown = set(raw) - _CONFIG_KEYS
        if unknown:
            raise ValidationError(
                f"{config_path}: unknown config keys {sorted(unknown)}"
            )
        base = config_path.parent
        for key in ("pilot_manifest", "wesad_dir", "survey_manifest", "response_times_csv"):
            if raw.get(key) is not None:
                raw[key] = base / raw[key]
        if raw.get("out_dir") is not None:
            raw["out_dir"] = base / raw["out_dir"]
        if raw.get("window_lens_s") is not None:
            raw["window_lens_s"] = tuple(float(w) for w in raw["window_lens_s"])
        values.update(raw)

    if args.seed is not None:
        values["master_seed"] = args.seed
    if args.runs is not None:
        values["runs"] = args.runs
    if args.windows is not None:
        try:
            values["window_lens_s"] = tuple(
                float(w) for w in args.windows.split(",") if w.strip()
            )
        except ValueError:
            raise ValidationError(
                f"--windows must be comma-separated numbers, got {args.windows!r}"
            ) from None
    if args.jobs is not None:
        values["jobs"] = args.jobs
    if args.out is not None:
        values["out_dir"] = Path(args.out)
    values.setdefault("out_dir", Path("out"))
    return RunConfig(**values)


# --- cache and ledger paths ------------------------------------------------

def _cache_dir(cfg: RunConfig) -> Path:
    return Path(cfg.out_dir) / "cache" / cfg.experiment_hash()[:12]


def _stress_index(cfg: RunConfig, window: float) -> Path:
    return _cache_dir(cfg) / f"stress_pool_{window:g}s.jsonl"


def _finetuned_index(cfg: RunConfig, window: float) -> Path:
    return _cache_dir(cfg) / f"finetuned_pool_{window:g}s.jsonl"


def _fresh_ledger(cfg: RunConfig, name: str) -> Path:
    path = Path(cfg.out_dir) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("", encoding="utf-8")
    return path


# --- subcommands -----------------------------------------------------------

def cmd_vanilla(cfg: RunConfig) -> int:
    cfg.require("pilot_manifest")
    records = load_manifest(cfg.pilot_manifest).records
    config_hash = cfg.experiment_hash()
    ledger = _fresh_ledger(cfg, "runs_vanilla.jsonl")
    all_metrics: list[RunMetrics] = []
    for window in cfg.window_lens_s:
        logger.info("vanilla protocol: %g s windows, %d runs", window, cfg.runs)
        metrics, _pool = run_vanilla(
            records,
            window,
            cfg.runs,
            cfg.train_spec(),
            master_seed=cfg.master_seed,
            jobs=cfg.jobs,
            out_dir=Path(cfg.out_dir) / "models" / "vanilla",
            ledger_path=ledger,
            config_hash=config_hash,
        )
        all_metrics.extend(metrics)
    path = write_f1_summary(
        aggregate(all_metrics), Path(cfg.out_dir) / "f1_summary_vanilla.csv", config_hash
    )
    logger.info("wrote %s", path)
    return 0


def cmd_pretrain(cfg: RunConfig) -> int:
    cfg.require("wesad_dir")
    config_hash = cfg.experiment_hash()
    ledger = _fresh_ledger(cfg, "runs_stress.jsonl")
    wesad_records = None
    for window in cfg.window_lens_s:
        index = _stress_index(cfg, window)
        if index.exists():
            logger.info("reusing cached pretrained pool %s", index)
            continue
        if wesad_records is None:
            wesad_records = load_wesad_dir(cfg.wesad_dir)
        logger.info("stress pretraining: %g s windows, %d runs", window, cfg.runs)
        pool = pretrain_wesad(
            wesad_records,
            window,
            cfg.runs,
            cfg.train_spec(),
            master_seed=cfg.master_seed,
            jobs=cfg.jobs,
            out_dir=Path(cfg.out_dir) / "models" / "stress",
            ledger_path=ledger,
            config_hash=config_hash,
        )
        index.parent.mkdir(parents=True, exist_ok=True)
        save_pool_index(pool, index)
        logger.info("cached %d stress models at %s", len(pool), index)
    return 0


def cmd_finetune(cfg: RunConfig) -> int:
    cfg.require("pilot_manifest")
    records = load_manifest(cfg.pilot_manifest).records
    config_hash = cfg.experiment_hash()
    ledger = _fresh_ledger(cfg, "runs_pretrained.jsonl")
    all_metrics: list[RunMetrics] = []
    for window in cfg.window_lens_s:
        index = _stress_index(cfg, window)
        stress_pool = None
        wesad_records = None
        if index.exists():
            logger.info("reusing cached pretrained pool %s", index)
            stress_pool = load_pool_index(index)
        else:
            cfg.require("wesad_dir")
            wesad_records = load_wesad_dir(cfg.wesad_dir)
        logger.info("fine-tuning: %g s windows, %d runs", window, cfg.runs)
        metrics, finetuned_pool, stress_pool = run_pretrained_protocol(
            records,
            wesad_records,
            window,
            cfg.runs,
            pretrain_spec=cfg.train_spec(),
            finetune_spec=cfg.finetune_spec(),
            master_seed=cfg.master_seed,
            jobs=cfg.jobs,
            out_dir=Path(cfg.out_dir) / "models" / "finetuned",
            ledger_path=ledger,
            config_hash=config_hash,
            stress_pool=stress_pool,
        )
        if not index.exists():
            index.parent.mkdir(parents=True, exist_ok=True)
            save_pool_index(stress_pool, index)
        ft_index = _finetuned_index(cfg, window)
        ft_index.parent.mkdir(parents=True, exist_ok=True)
        save_pool_index(finetuned_pool, ft_index)
        all_metrics.extend(metrics)
    out = Path(cfg.out_dir)
    write_f1_summary(aggregate(all_metrics), out / "f1_summary_pretrained.csv", config_hash)
    write_transfer_scatter(all_metrics, out / "transfer_scatter.csv", config_hash)
    try:
        correlations = correlate_source_target(all_metrics)
    except UndefinedCorrelationError as exc:
        logger.warning(
            "transfer correlations are undefined for these scores (%s); "
            "skipping transfer_correlations.csv", exc,
        )
    else:
        write_transfer_correlations(
            correlations, out / "transfer_correlations.csv", config_hash
        )
    logger.info("wrote reports under %s", out)
    return 0


def _survey_groups(records) -> dict[tuple[str, str], dict[str, list]]:
    groups: dict[tuple[str, str], dict[str, list]] = {}
    for record in records:
        bucket = groups.setdefault(
            (record.subject_id, record.session_id),
            {"calibration": [], "survey": []},
        )
        if record.condition in SURVEY_CONDITIONS:
            bucket["survey"].append(record)
        elif record.condition in (Condition.COGNITIVE_LOAD, Condition.BASELINE):
            bucket["calibration"].append(record)
        else:
            raise ValidationError(
                f"survey manifest record {record.subject_id}/{record.session_id} "
                f"has unexpected condition {record.condition.value!r}"
            )
    return groups


def cmd_survey(cfg: RunConfig) -> int:
    cfg.require("survey_manifest")
    window = CALIBRATION_WINDOW_LEN_S
    ft_index = _finetuned_index(cfg, window)
    stress_index = _stress_index(cfg, window)
    for index in (ft_index, stress_index):
        if not index.exists():
            raise ValidationError(
                f"missing cached pool {index}; run `cogload pretrain` and "
                "`cogload finetune` with this config first"
            )
    pool = load_pool_index(ft_index)
    stress_model = best_source_entry(load_pool_index(stress_index)).get_weights()
    config_hash = cfg.experiment_hash()

    records = load_manifest(cfg.survey_manifest).records
    groups = _survey_groups(records)
    rows = []
    subject_order = {
        s: i for i, s in enumerate(sorted_subjects({k[0] for k in groups}))
    }
    for subject, session in sorted(
        groups, key=lambda k: (subject_order[k[0]], k[1])
    ):
        bucket = groups[(subject, session)]
        if not bucket["calibration"]:
            raise ValidationError(
                f"subject {subject} session {session}: no calibration recordings "
                "(cognitive_load + baseline) in the survey manifest"
            )
        if not bucket["survey"]:
            raise ValidationError(
                f"subject {subject} session {session}: no survey recordings"
            )
        result = calibrate_subject(pool, bucket["calibration"], window)
        logger.info(
            "subject %s session %s: calibration F1 %.3f%s",
            subject, session, result.calibration_f1,
            " (excluded)" if result.excluded else "",
        )
        for record in sorted(bucket["survey"], key=lambda r: not r.gamified):
            rows.append(burden_percentages(result, stress_model, record, window))
    out = Path(cfg.out_dir)
    write_survey_burden(rows, out / "survey_burden.csv", config_hash)

    if cfg.pilot_manifest is not None:
        cfg.require("pilot_manifest")
        pilot_records = load_manifest(cfg.pilot_manifest).records
        leakage = stress_leakage_check(stress_model, pilot_records, window)
        write_leakage_report(leakage, out / "stress_leakage.csv", config_hash)
    logger.info("wrote survey reports under %s", out)
    return 0


def cmd_response_times(cfg: RunConfig) -> int:
    cfg.require("response_times_csv")
    config_hash = cfg.experiment_hash()
    table = response_time_analysis(cfg.response_times_csv, cfg.gamified_surveys)
    out = Path(cfg.out_dir)
    write_response_time_summary(table, out / "response_time_summary.csv", config_hash)
    write_response_time_positions(table, out / "response_time_positions.csv", config_hash)
    logger.info(
        "mean seconds per question: gamified %.3f (n=%d), plain %.3f (n=%d)",
        table.mean_gamified_s, table.n_gamified,
        table.mean_non_gamified_s, table.n_non_gamified,
    )
    return 0


def cmd_report(cfg: RunConfig) -> int:
    config_hash = cfg.experiment_hash()
    metrics: list[RunMetrics] = []
    out = Path(cfg.out_dir)
    for name in ("runs_vanilla.jsonl", "runs_pretrained.jsonl"):
        path = out / name
        if not path.exists():
            continue
        for record in read_ledger(path):
            if record.get("event") != "run":
                continue
            if record.get("protocol") not in ("vanilla", "pretrained"):
                continue
            metrics.append(RunMetrics.from_record(record))
    if not metrics:
        raise ValidationError(
            f"no run ledgers under {out}; run `cogload vanilla` or "
            "`cogload finetune` first"
        )
    write_f1_summary(aggregate(metrics), out / "f1_summary.csv", config_hash)
    logger.info("aggregated %d runs into %s", len(metrics), out / "f1_summary.csv")
    return 0


# --- argument parsing ------------------------------------------------------

_COMMANDS = {
    "vanilla": (cmd_vanilla, "train the detector from scratch on the pilot dataset"),
    "pretrain": (cmd_pretrain, "train stress models on converted WESAD recordings"),
    "finetune": (cmd_finetune, "fine-tune pretrained stress models on the pilot folds"),
    "survey": (cmd_survey, "calibration matching and survey burden percentages"),
    "response-times": (cmd_response_times, "survey response-time statistics"),
    "report": (cmd_report, "re-aggregate the run ledgers into the F1 summary"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cogload",
        description="Cognitive-load detection experiments on wrist PPG.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_fn, help_text) in _COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file; paths resolve relative to it")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
        p.add_argument("--runs", type=int, help="number of repeated runs (overrides config)")
        p.add_argument(
            "--windows",
            help="comma-separated window lengths in seconds, e.g. 10,30,60",
        )
        p.add_argument("--jobs", type=int, help="parallel worker processes")
        p.add_argument("--out", help="output directory (overrides config)")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=logging.INFO,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    command = _COMMANDS[args.command][0]
    try:
        cfg = load_config(args)
        return command(cfg)
    except (
        ValidationError,
        ParseError,
        ChecksumError,
        ShapeError,
        FileNotFoundError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
