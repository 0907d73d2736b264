"""Seeded synthetic datasets for tests and demos.

Real recordings require credentialed downloads, so everything here fabricates
PPG-like signals with a controllable class structure.  Because training
windows are z-scored per window, class identity is carried by *relative*
high-frequency content (a smooth pulse-like carrier plus condition-dependent
wideband noise), which survives normalization; constant offsets, which do
not, are used only by the raw separable-window fixtures that bypass
normalization.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Sequence

import numpy as np

from cogload.data import (
    Condition,
    PpgSignal,
    SessionRecord,
    WESAD_CSV_HEADER,
    save_bvp_csv,
)
from cogload.nn import ModelWeights, WeightsMeta, init_weights
from cogload.protocols import derive_seed
from cogload.windows import WindowBatch, WindowSource, WindowSpec

DEFAULT_FS_HZ = 64.0
CARRIER_HZ = 1.2

# Wideband-noise sigma per condition, relative to a unit-amplitude carrier.
HF_SIGMA = {
    Condition.COGNITIVE_LOAD: 0.30,
    Condition.BASELINE: 0.05,
    Condition.STRESS: 0.30,
    Condition.WESAD_BASELINE: 0.05,
    Condition.AMUSEMENT: 0.12,
}

# Mirrors the real corpus: subjects with both sessions, and two with only one.
SURVEY_SUBJECTS: dict[str, tuple[str, ...]] = {
    **{str(s): ("1", "2") for s in (11, 12, 13, 14, 15, 16, 17, 18, 22, 23, 24)},
    "20": ("1",),
    "21": ("1",),
}

# Condition durations that land the 60 s stress-task training-window count
# in the expected band for a 13-subject training split.
WESAD_DURATIONS_S = {
    Condition.WESAD_BASELINE: 1200.0,
    Condition.STRESS: 600.0,
    Condition.AMUSEMENT: 392.0,
}


def synth_wave(
    n_samples: int,
    hf_sigma: float,
    seed: int,
    fs_hz: float = DEFAULT_FS_HZ,
    carrier_hz: float = CARRIER_HZ,
    amplitude: float = 1.0,
    offset: float = 0.0,
) -> np.ndarray:
    """Pulse-like carrier plus white noise; the noise level encodes the class."""
    rng = np.random.default_rng(seed)
    t = np.arange(n_samples) / fs_hz
    phase = rng.uniform(0.0, 2.0 * math.pi)
    wave = amplitude * np.sin(2.0 * math.pi * carrier_hz * t + phase)
    return offset + wave + rng.normal(0.0, hf_sigma, n_samples)


def make_record(
    subject_id: str,
    session_id: str,
    condition: Condition,
    duration_s: float,
    master_seed: int = 0,
    fs_hz: float = DEFAULT_FS_HZ,
    gamified: bool | None = None,
    hf_sigma: float | None = None,
) -> SessionRecord:
    """One synthetic recording for (subject, session, condition)."""
    if hf_sigma is None:
        hf_sigma = HF_SIGMA.get(condition, 0.05)
    seed = derive_seed(
        master_seed, 0, subject_id, f"synth|{session_id}|{condition.value}"
    )
    samples = synth_wave(int(round(duration_s * fs_hz)), hf_sigma, seed, fs_hz)
    return SessionRecord(
        subject_id=subject_id,
        session_id=session_id,
        condition=condition,
        signal=PpgSignal(start_epoch=1_600_000_000.0, fs_hz=fs_hz, samples=samples),
        gamified=gamified,
    )


def make_pilot_dataset(
    n_subjects: int = 11,
    duration_s: float = 150.0,
    master_seed: int = 0,
    fs_hz: float = DEFAULT_FS_HZ,
) -> list[SessionRecord]:
    """Cognitive-load + baseline recordings for subjects "1".."n"."""
    records = []
    for i in range(1, n_subjects + 1):
        for condition in (Condition.COGNITIVE_LOAD, Condition.BASELINE):
            records.append(
                make_record(str(i), "1", condition, duration_s, master_seed, fs_hz)
            )
    return records


def make_wesad_dataset(
    n_subjects: int = 15,
    master_seed: int = 0,
    fs_hz: float = DEFAULT_FS_HZ,
    durations_s: dict[Condition, float] | None = None,
) -> list[SessionRecord]:
    """Stress/baseline/amusement recordings shaped like the converted corpus."""
    durations = dict(WESAD_DURATIONS_S if durations_s is None else durations_s)
    records = []
    for i in range(2, n_subjects + 2):  # WESAD numbering starts at S2
        subject = f"S{i}"
        for condition, duration in durations.items():
            records.append(
                make_record(subject, "seg0", condition, duration, master_seed, fs_hz)
            )
    return records


def make_survey_dataset(
    master_seed: int = 0,
    fs_hz: float = DEFAULT_FS_HZ,
    subjects: dict[str, tuple[str, ...]] | None = None,
    calibration_duration_s: float = 150.0,
    survey_duration_s: float = 330.0,
    cogload_fraction_gamified: float = 0.7,
    cogload_fraction_plain: float = 0.4,
) -> list[SessionRecord]:
    """Calibration pairs plus gamified/plain survey recordings per session.

    Survey signals are stitched from 30 s blocks drawn as cognitive-load-like
    or baseline-like with a per-variant probability, so the burden
    percentages have a seeded ground truth to stay near.
    """
    subjects = SURVEY_SUBJECTS if subjects is None else subjects
    records = []
    for subject, sessions in subjects.items():
        for session in sessions:
            records.append(
                make_record(
                    subject, session, Condition.COGNITIVE_LOAD,
                    calibration_duration_s, master_seed, fs_hz,
                )
            )
            records.append(
                make_record(
                    subject, session, Condition.BASELINE,
                    calibration_duration_s, master_seed, fs_hz,
                )
            )
            for condition, fraction in (
                (Condition.SURVEY_GAMIFIED, cogload_fraction_gamified),
                (Condition.SURVEY_PLAIN, cogload_fraction_plain),
            ):
                records.append(
                    _make_survey_record(
                        subject, session, condition, survey_duration_s,
                        fraction, master_seed, fs_hz,
                    )
                )
    return records


def _make_survey_record(
    subject_id: str,
    session_id: str,
    condition: Condition,
    duration_s: float,
    cogload_fraction: float,
    master_seed: int,
    fs_hz: float,
) -> SessionRecord:
    seed = derive_seed(
        master_seed, 0, subject_id, f"survey|{session_id}|{condition.value}"
    )
    rng = np.random.default_rng(seed)
    block = int(round(30.0 * fs_hz))
    n_samples = int(round(duration_s * fs_hz))
    parts = []
    produced = 0
    while produced < n_samples:
        load_like = rng.random() < cogload_fraction
        sigma = HF_SIGMA[
            Condition.COGNITIVE_LOAD if load_like else Condition.BASELINE
        ]
        size = min(block, n_samples - produced)
        parts.append(
            synth_wave(size, sigma, int(rng.integers(2**63)), fs_hz)
        )
        produced += size
    return SessionRecord(
        subject_id=subject_id,
        session_id=session_id,
        condition=condition,
        signal=PpgSignal(
            start_epoch=1_600_000_000.0,
            fs_hz=fs_hz,
            samples=np.concatenate(parts),
        ),
        gamified=condition == Condition.SURVEY_GAMIFIED,
    )


# --- raw separable window fixtures (no normalization) ----------------------

def make_separable_windows(
    window_len_samples: int,
    n_per_class: int,
    seed: int,
    offset: float = 1.0,
    noise: float = 0.1,
) -> WindowBatch:
    """Two classes at constant offsets +/-``offset`` plus Gaussian noise.

    Deliberately unnormalized: the offset is the class signal, and per-window
    z-scoring would erase it.
    """
    rng = np.random.default_rng(seed)
    per_class = []
    for label, mean in ((0, -offset), (1, offset)):
        per_class.append(
            rng.normal(mean, noise, size=(n_per_class, window_len_samples))
        )
    windows = np.concatenate(per_class, axis=0).astype(np.float32)
    labels = np.repeat(np.array([0, 1], dtype=np.int64), n_per_class)
    order = rng.permutation(len(labels))
    spec = WindowSpec(
        window_len_s=window_len_samples / DEFAULT_FS_HZ,
        step_samples_positive=window_len_samples,
        step_samples_negative=window_len_samples,
        normalize="none",
    )
    sources = [
        WindowSource("synthetic", "fixture", Condition.COGNITIVE_LOAD, 0)
        for _ in range(len(labels))
    ]
    return WindowBatch(
        windows=windows[order], labels=labels[order], spec=spec, source=sources
    )


def constant_model(
    window_len_samples: int, always_predict: int, run_id: int = 0, fold_id: str = "fixed"
) -> ModelWeights:
    """A model whose output is a fixed class regardless of input.

    Zeroed feature layers make the logits equal the output biases, so the
    argmax is pinned; handy for planting known scores in pool fixtures.
    """
    if always_predict not in (0, 1):
        raise ValueError(f"always_predict must be 0 or 1, got {always_predict}")
    weights = init_weights(window_len_samples, seed=0, run_id=run_id, fold_id=fold_id)
    for name, arr in weights.tensors():
        arr[...] = 0.0
    weights.out_b[always_predict] = 10.0
    weights.meta = WeightsMeta(
        window_len_samples=window_len_samples,
        protocol="constant",
        run_id=run_id,
        fold_id=fold_id,
    )
    return weights


# --- on-disk dataset fabrication -------------------------------------------

def write_dataset(
    records: Sequence[SessionRecord],
    directory: str | Path,
    dataset_name: str = "synthetic",
) -> Path:
    """Write records as BVP CSVs plus a manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for record in records:
        name = (
            f"{record.subject_id}_{record.session_id}_{record.condition.value}.csv"
        )
        save_bvp_csv(record.signal, directory / name)
        entry = {
            "path": name,
            "subject": record.subject_id,
            "session": record.session_id,
            "condition": record.condition.value,
        }
        if record.gamified is not None:
            entry["gamified"] = record.gamified
        entries.append(entry)
    manifest_path = directory / "manifest.json"
    import json

    manifest_path.write_text(
        json.dumps({"dataset_name": dataset_name, "records": entries}, indent=2)
        + "\n",
        encoding="utf-8",
    )
    return manifest_path


def write_wesad_like_csv(
    path: str | Path,
    segments: Sequence[tuple[str, float]],
    seed: int = 0,
    fs_hz: float = DEFAULT_FS_HZ,
) -> Path:
    """Converter-style CSV from a (label, duration_s) timeline.

    Labels outside the kept set (e.g. "transient", "meditation") advance the
    sample index without emitting rows, leaving the index gaps a real
    converted file has.
    """
    kept = {"baseline", "stress", "amusement"}
    sigma_by_label = {
        "baseline": HF_SIGMA[Condition.WESAD_BASELINE],
        "stress": HF_SIGMA[Condition.STRESS],
        "amusement": HF_SIGMA[Condition.AMUSEMENT],
    }
    path = Path(path)
    rng = np.random.default_rng(seed)
    index = 0
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(WESAD_CSV_HEADER)
        for label, duration_s in segments:
            n = int(round(duration_s * fs_hz))
            if label not in kept:
                index += n
                continue
            wave = synth_wave(
                n, sigma_by_label[label], int(rng.integers(2**63)), fs_hz
            )
            for value in wave:
                writer.writerow([index, repr(float(np.float32(value))), label])
                index += 1
    return path


def write_response_time_csv(
    path: str | Path,
    subjects: dict[str, tuple[str, ...]] | None = None,
    questions_per_survey: int = 21,
    gamified_duration_s: float = 5.5,
    plain_duration_s: float = 6.0,
    last_question_duration_s: float = 90.0,
    jitter_s: float = 0.0,
    master_seed: int = 0,
) -> Path:
    """Timing-event CSV with known per-condition durations.

    With ``jitter_s=0`` every non-final gamified question takes exactly
    ``gamified_duration_s`` (plain likewise), and the deliberately slow final
    question shows up in nothing once the analysis excludes it.
    """
    subjects = SURVEY_SUBJECTS if subjects is None else subjects
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["subject", "session", "survey", "question_index", "start_epoch_s", "end_epoch_s"]
        )
        for subject, sessions in sorted(subjects.items()):
            for session in sessions:
                rng = np.random.default_rng(
                    derive_seed(master_seed, 0, subject, f"rt|{session}")
                )
                clock = 1_600_000_000.0
                for survey, base in (
                    ("gamified", gamified_duration_s),
                    ("plain", plain_duration_s),
                ):
                    for q in range(1, questions_per_survey + 1):
                        duration = (
                            last_question_duration_s
                            if q == questions_per_survey
                            else base + (rng.uniform(-jitter_s, jitter_s) if jitter_s else 0.0)
                        )
                        writer.writerow(
                            [subject, session, survey, q, repr(clock), repr(clock + duration)]
                        )
                        clock += duration + 1.0
                    clock += 60.0
    return path
