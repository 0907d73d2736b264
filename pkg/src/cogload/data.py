"""Loading of BVP recordings, dataset manifests, and converted WESAD streams.

On-disk formats understood here:

* BVP CSV (Empatica export style): line 1 is the start epoch, line 2 the
  sampling rate, every following line one float sample.  A headerless
  single-column variant is accepted when ``fs_hz`` (and optionally
  ``start_epoch``) is supplied by the caller, typically via the manifest.
* Manifest: a JSON document ``{dataset_name, notes?, records: [...]}``
  where each record is ``{path, subject, session, condition, gamified?,
  fs_hz?, start_epoch?}``.  Record paths are resolved relative to the
  manifest file.
* Converted WESAD CSV: header line ``sample_index,bvp,label``, one file
  per subject, 64 Hz implied.  Gaps in ``sample_index`` mark boundaries
  between recording segments.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

logger = logging.getLogger(__name__)

EXPECTED_FS_HZ = 64.0


class ParseError(ValueError):
    """A file does not follow its documented layout."""


class ValidationError(ValueError):
    """Parsed content violates a dataset invariant."""


class Condition(str, Enum):
    """Experimental condition attached to one recording."""

    COGNITIVE_LOAD = "cognitive_load"
    BASELINE = "baseline"
    STRESS = "stress"
    AMUSEMENT = "amusement"
    WESAD_BASELINE = "wesad_baseline"
    SURVEY_GAMIFIED = "survey_gamified"
    SURVEY_PLAIN = "survey_plain"

    @classmethod
    def from_string(cls, value: str) -> "Condition":
        normalized = value.strip().lower().replace("-", "_")
        try:
            return cls(normalized)
        except ValueError:
            allowed = ", ".join(c.value for c in cls)
            raise ValidationError(
                f"unknown condition {value!r}; expected one of: {allowed}"
            ) from None


SURVEY_CONDITIONS = frozenset({Condition.SURVEY_GAMIFIED, Condition.SURVEY_PLAIN})

# Converted-WESAD label vocabulary: kept labels map onto conditions, the
# ignorable set is dropped silently, anything else is an error.
WESAD_KEPT_LABELS = {
    "baseline": Condition.WESAD_BASELINE,
    "stress": Condition.STRESS,
    "amusement": Condition.AMUSEMENT,
}
WESAD_IGNORABLE_LABELS = frozenset({"transient", "meditation", "undefined"})

WESAD_CSV_HEADER = ("sample_index", "bvp", "label")


@dataclass(eq=False)
class PpgSignal:
    """A uniformly sampled BVP series."""

    start_epoch: float
    fs_hz: float
    samples: np.ndarray  # 1-D float32

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1:
            raise ValidationError(f"samples must be 1-D, got shape {self.samples.shape}")
        if not self.fs_hz > 0:
            raise ValidationError(f"sampling rate must be positive, got {self.fs_hz}")
        if self.samples.size == 0:
            raise ValidationError("signal contains no samples")
        if not np.isfinite(self.samples).all():
            raise ValidationError("signal contains non-finite samples")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.fs_hz

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(eq=False)
class SessionRecord:
    """One subject x session x condition recording."""

    subject_id: str
    session_id: str
    condition: Condition
    signal: PpgSignal
    gamified: bool | None = None
    source_path: Path | None = None

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.subject_id, self.session_id, self.condition.value)


@dataclass(eq=False)
class DatasetManifest:
    dataset_name: str
    records: list[SessionRecord] = field(default_factory=list)
    notes: str = ""

    def subjects(self) -> list[str]:
        return sorted({r.subject_id for r in self.records})


def _parse_float(token: str, path: Path, lineno: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"{path}:{lineno}: not a float: {token!r}") from None
    if not np.isfinite(value):
        raise ParseError(f"{path}:{lineno}: non-finite value: {token!r}")
    return value


def load_bvp_csv(
    path: str | Path,
    *,
    fs_hz: float | None = None,
    start_epoch: float | None = None,
) -> PpgSignal:
    """Load a BVP CSV.

    Without ``fs_hz`` the Empatica layout is assumed (epoch line, rate
    line, then samples).  With ``fs_hz`` the file is read as a headerless
    single sample column; ``start_epoch`` then defaults to 0.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"BVP file not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()

    body_start = 0
    if fs_hz is None:
        if len(lines) < 2:
            raise ParseError(f"{path}: expected epoch and sampling-rate header lines")
        start_epoch = _parse_float(lines[0].strip(), path, 1)
        fs_hz = _parse_float(lines[1].strip(), path, 2)
        body_start = 2
    elif start_epoch is None:
        start_epoch = 0.0
    if fs_hz <= 0:
        raise ValidationError(f"{path}: sampling rate must be positive, got {fs_hz}")

    samples: list[float] = []
    for i, line in enumerate(lines[body_start:], start=body_start + 1):
        token = line.strip()
        if not token:
            continue
        samples.append(_parse_float(token, path, i))
    if not samples:
        raise ValidationError(f"{path}: no samples after header")
    return PpgSignal(start_epoch=start_epoch, fs_hz=fs_hz, samples=np.asarray(samples))


def save_bvp_csv(signal: PpgSignal, path: str | Path) -> None:
    """Write a signal in the Empatica layout; float32 samples round-trip bit-exactly."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{signal.start_epoch!r}\n")
        fh.write(f"{signal.fs_hz!r}\n")
        for value in signal.samples:
            fh.write(f"{float(value)!r}\n")


def load_manifest(path: str | Path) -> DatasetManifest:
    """Load a dataset manifest and every recording it references."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict) or "records" not in doc:
        raise ParseError(f"{path}: manifest must be an object with a 'records' array")

    entries = doc["records"]
    if not isinstance(entries, list) or not entries:
        raise ValidationError(f"{path}: manifest lists no records")

    records: list[SessionRecord] = []
    seen: set[tuple[str, str, str]] = set()
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise ParseError(f"{path}: record {i} is not an object")
        try:
            rel = entry["path"]
            subject = str(entry["subject"])
            session = str(entry["session"])
            condition = Condition.from_string(str(entry["condition"]))
        except KeyError as exc:
            raise ParseError(f"{path}: record {i} missing field {exc}") from None

        gamified = entry.get("gamified")
        if gamified is not None and not isinstance(gamified, bool):
            raise ParseError(f"{path}: record {i}: 'gamified' must be a boolean")
        if condition in SURVEY_CONDITIONS:
            implied = condition is Condition.SURVEY_GAMIFIED
            if gamified is None:
                gamified = implied
            elif gamified != implied:
                raise ValidationError(
                    f"{path}: record {i}: gamified={gamified} contradicts "
                    f"condition {condition.value!r}"
                )

        record_path = (path.parent / rel).resolve()
        signal = load_bvp_csv(
            record_path,
            fs_hz=entry.get("fs_hz"),
            start_epoch=entry.get("start_epoch"),
        )
        record = SessionRecord(
            subject_id=subject,
            session_id=session,
            condition=condition,
            signal=signal,
            gamified=gamified,
            source_path=record_path,
        )
        if record.key in seen:
            raise ValidationError(
                f"{path}: duplicate record (subject={subject!r}, "
                f"session={session!r}, condition={condition.value!r})"
            )
        seen.add(record.key)
        records.append(record)

    return DatasetManifest(
        dataset_name=str(doc.get("dataset_name", path.stem)),
        records=records,
        notes=str(doc.get("notes", "")),
    )


def split_wesad_labels(
    rows: Iterable[tuple[int, float, str]],
    subject_id: str,
    fs_hz: float = EXPECTED_FS_HZ,
) -> list[SessionRecord]:
    """Split a converted-WESAD sample stream into per-segment records.

    ``rows`` are (sample_index, bvp, label) in stream order.  A new segment
    starts whenever the label changes or sample indices are not contiguous.
    Labels in the ignorable set are dropped; anything unknown is an error.
    """
    segments: list[tuple[Condition, int, list[float]]] = []
    current: list[float] = []
    current_label: str | None = None
    current_start = 0
    prev_index: int | None = None

    def flush() -> None:
        if current_label is not None and current:
            segments.append(
                (WESAD_KEPT_LABELS[current_label], current_start, list(current))
            )

    for sample_index, bvp, label in rows:
        label = label.strip().lower()
        if label in WESAD_IGNORABLE_LABELS:
            flush()
            current, current_label, prev_index = [], None, None
            continue
        if label not in WESAD_KEPT_LABELS:
            raise ValidationError(
                f"subject {subject_id}: unknown WESAD label {label!r}"
            )
        contiguous = prev_index is not None and sample_index == prev_index + 1
        if label != current_label or not contiguous:
            flush()
            current = []
            current_label = label
            current_start = sample_index
        current.append(bvp)
        prev_index = sample_index
    flush()

    records = []
    for ordinal, (condition, start_index, samples) in enumerate(segments):
        records.append(
            SessionRecord(
                subject_id=subject_id,
                session_id=f"seg{ordinal:03d}",
                condition=condition,
                signal=PpgSignal(
                    start_epoch=start_index / fs_hz,
                    fs_hz=fs_hz,
                    samples=np.asarray(samples),
                ),
            )
        )
    return records


def _iter_wesad_rows(path: Path) -> Iterator[tuple[int, float, str]]:
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if tuple(h.strip() for h in header) != WESAD_CSV_HEADER:
            raise ParseError(
                f"{path}: expected header {','.join(WESAD_CSV_HEADER)!r}, "
                f"got {','.join(header)!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            try:
                index = int(row[0])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: not an integer: {row[0]!r}") from None
            yield index, _parse_float(row[1], path, lineno), row[2]


def read_wesad_csv(path: str | Path, subject_id: str | None = None) -> list[SessionRecord]:
    """Read one converted-WESAD per-subject CSV into segment records."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"WESAD CSV not found: {path}")
    if subject_id is None:
        subject_id = path.stem
    records = split_wesad_labels(_iter_wesad_rows(path), subject_id)
    if not records:
        raise ValidationError(f"{path}: no kept-label segments")
    for record in records:
        record.source_path = path
    return records


def load_wesad_dir(directory: str | Path) -> list[SessionRecord]:
    """Load every per-subject CSV in a converted-WESAD directory."""
    directory = Path(directory)
    paths = sorted(directory.glob("*.csv"))
    if not paths:
        raise FileNotFoundError(f"no converted WESAD CSVs in {directory}")
    records: list[SessionRecord] = []
    for p in paths:
        records.extend(read_wesad_csv(p))
    return records


def records_by_subject(records: Sequence[SessionRecord]) -> dict[str, list[SessionRecord]]:
    grouped: dict[str, list[SessionRecord]] = {}
    for record in records:
        grouped.setdefault(record.subject_id, []).append(record)
    return grouped
