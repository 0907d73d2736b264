"""Convert WESAD per-subject archives to per-subject wrist-BVP CSVs.

The WESAD distribution ships one pickled dict per subject (``S2/S2.pkl``)
holding, among other channels, the Empatica E4 wrist Blood Volume Pulse
signal at 64 Hz (``data["signal"]["wrist"]["BVP"]``) and a study-protocol
label track at 700 Hz (``data["label"]``).  Conversion:

1. resamples the label track onto the BVP timeline by nearest neighbor
   (labels are long contiguous blocks, so boundary jitter is at most one
   sample),
2. keeps only the baseline / stress / amusement conditions and drops the
   rest (transient, meditation, and the codes the dataset documentation
   says to ignore),
3. writes ``<subject>.csv`` with header ``sample_index,bvp,label``,
   preserving the original 64 Hz sample indices so that dropped spans show
   up as index gaps — segment boundaries for downstream readers.

Label codes follow the WESAD documentation: 0 transient/undefined,
1 baseline, 2 stress, 3 amusement, 4 meditation, 5-7 ignorable.  Any other
code is treated as a malformed archive rather than silently dropped.
"""

from __future__ import annotations

import hashlib
import pickle
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LABEL_TRACK_HZ = 700.0
BVP_HZ = 64.0

# Study-protocol label codes, per the WESAD documentation.
KEPT_CODES = {1: "baseline", 2: "stress", 3: "amusement"}
DROPPED_CODES = frozenset({0, 4, 5, 6, 7})

CSV_HEADER = "sample_index,bvp,label"


class ConverterError(Exception):
    """Base class for conversion failures."""


class ArchiveFormatError(ConverterError):
    """The file does not look like a WESAD subject archive."""


class MissingChannelError(ConverterError):
    """A required signal channel is absent from the archive."""


@dataclass
class ConverterReport:
    """What one subject's conversion produced.

    ``rows_written`` always equals the number of input BVP samples whose
    aligned label is one of the kept conditions; the per-label counts
    partition it.
    """

    subject_id: str
    output_path: Path
    sha256: str
    input_bvp_samples: int
    kept_counts: dict[str, int]
    dropped_counts: dict[str, int]

    @property
    def rows_written(self) -> int:
        return sum(self.kept_counts.values())

    def to_dict(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "output_path": str(self.output_path),
            "sha256": self.sha256,
            "input_bvp_samples": self.input_bvp_samples,
            "rows_written": self.rows_written,
            "kept_counts": dict(self.kept_counts),
            "dropped_counts": dict(self.dropped_counts),
        }


def _load_archive(path: Path) -> dict:
    try:
        with path.open("rb") as fh:
            # WESAD archives were pickled under Python 2; latin1 maps its
            # byte strings losslessly.
            data = pickle.load(fh, encoding="latin1")
    except (pickle.UnpicklingError, EOFError, AttributeError, IndexError) as exc:
        raise ArchiveFormatError(f"{path}: not a readable pickle archive ({exc})")
    if not isinstance(data, dict):
        raise ArchiveFormatError(
            f"{path}: expected a dict at the top level, got {type(data).__name__}"
        )
    return data


def _wrist_bvp(data: dict, path: Path) -> np.ndarray:
    signal = data.get("signal")
    if not isinstance(signal, dict):
        raise ArchiveFormatError(f"{path}: no 'signal' mapping in archive")
    wrist = signal.get("wrist")
    if not isinstance(wrist, dict):
        raise ArchiveFormatError(f"{path}: no wrist-device signals in archive")
    if "BVP" not in wrist:
        raise MissingChannelError(
            f"{path}: wrist BVP channel missing (archive has: {sorted(wrist)})"
        )
    bvp = np.asarray(wrist["BVP"], dtype=np.float64).ravel()
    if bvp.size == 0:
        raise ArchiveFormatError(f"{path}: wrist BVP channel is empty")
    return bvp


def _label_track(data: dict, path: Path) -> np.ndarray:
    if "label" not in data:
        raise ArchiveFormatError(f"{path}: no 'label' track in archive")
    labels = np.asarray(data["label"]).ravel()
    if labels.size == 0:
        raise ArchiveFormatError(f"{path}: label track is empty")
    if not np.issubdtype(labels.dtype, np.integer):
        as_int = labels.astype(np.int64)
        if not np.array_equal(as_int, labels):
            raise ArchiveFormatError(f"{path}: label track has non-integer values")
        labels = as_int
    known = set(KEPT_CODES) | DROPPED_CODES
    unknown = sorted(set(np.unique(labels).tolist()) - known)
    if unknown:
        raise ArchiveFormatError(
            f"{path}: unknown protocol label code(s) {unknown}; "
            f"expected a subset of {sorted(known)}"
        )
    return labels


def _subject_id(data: dict, path: Path) -> str:
    subject = data.get("subject")
    if isinstance(subject, bytes):
        subject = subject.decode("latin1")
    if isinstance(subject, str) and subject.strip():
        return subject.strip()
    return path.stem


def align_labels(
    labels: np.ndarray,
    n_bvp: int,
    label_hz: float = LABEL_TRACK_HZ,
    bvp_hz: float = BVP_HZ,
) -> np.ndarray:
    """Nearest-neighbor resample of the label track onto the BVP timeline.

    BVP sample i sits at time i/bvp_hz; the nearest label index is
    round(i * label_hz / bvp_hz), clipped into the track.
    """
    idx = np.rint(np.arange(n_bvp) * (label_hz / bvp_hz)).astype(np.int64)
    np.clip(idx, 0, len(labels) - 1, out=idx)
    return labels[idx]


def convert_subject(archive_path: str | Path, out_dir: str | Path) -> ConverterReport:
    """Convert one subject archive to ``<out_dir>/<subject>.csv``.

    Returns a report with per-label kept/dropped counts and the SHA-256 of
    the written file.  Raises :class:`ConverterError` subclasses on missing
    channels or malformed archives.
    """
    archive_path = Path(archive_path)
    out_dir = Path(out_dir)
    if not archive_path.exists():
        raise FileNotFoundError(f"archive not found: {archive_path}")

    data = _load_archive(archive_path)
    bvp = _wrist_bvp(data, archive_path)
    labels = _label_track(data, archive_path)
    subject = _subject_id(data, archive_path)

    aligned = align_labels(labels, len(bvp))
    counts = np.bincount(aligned, minlength=8)
    kept_counts = {name: int(counts[code]) for code, name in KEPT_CODES.items()}
    dropped_counts = {
        str(code): int(counts[code])
        for code in sorted(DROPPED_CODES)
        if counts[code]
    }
    if sum(kept_counts.values()) == 0:
        raise ArchiveFormatError(
            f"{archive_path}: no baseline/stress/amusement samples after alignment"
        )

    kept_idx = np.flatnonzero(np.isin(aligned, list(KEPT_CODES)))
    lines = [CSV_HEADER]
    for i, value, code in zip(
        kept_idx.tolist(), bvp[kept_idx].tolist(), aligned[kept_idx].tolist()
    ):
        lines.append(f"{i},{value!r},{KEPT_CODES[code]}")
    blob = ("\n".join(lines) + "\n").encode("ascii")

    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / f"{subject}.csv"
    out_path.write_bytes(blob)

    return ConverterReport(
        subject_id=subject,
        output_path=out_path,
        sha256=hashlib.sha256(blob).hexdigest(),
        input_bvp_samples=int(len(bvp)),
        kept_counts=kept_counts,
        dropped_counts=dropped_counts,
    )


def discover_archives(root: str | Path) -> list[Path]:
    """Find per-subject archives under an extracted WESAD root (``S*/S*.pkl``).

    Sorted by subject number so S2 precedes S10.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"not a directory: {root}")

    def order(path: Path):
        m = re.fullmatch(r"S(\d+)", path.stem)
        return (0, int(m.group(1))) if m else (1, path.stem)

    found = {p.resolve() for p in root.glob("S*/S*.pkl")}
    found.update(p.resolve() for p in root.glob("S*.pkl"))
    return sorted(found, key=order)
