#!/usr/bin/env python3
"""Survey-period analyses: calibration matching, burden, leakage, timing.

Builds a small pool of trained detectors, matches each synthetic survey
participant to their best-scoring model via Stroop/baseline calibration,
and then answers the downstream questions: how much of each survey was
spent under high cognitive load, how much under stress, does the stress
model fire on cognitive load (leakage), and how long did questions take.
"""

from pathlib import Path
import tempfile

from cogload.analysis import (
    burden_percentages,
    calibrate_subject,
    response_time_analysis,
    stress_leakage_check,
)
from cogload.data import Condition
from cogload.nn import TrainSpec
from cogload.protocols import pretrain_wesad, run_vanilla
from cogload.synthetic import (
    make_pilot_dataset,
    make_survey_dataset,
    make_wesad_dataset,
    write_response_time_csv,
)

WINDOW_S = 10.0
SPEC = TrainSpec(max_epochs=6, patience_epochs=3, batch_size=64)

# --------------------------------------------------------- model pools
pilot = make_pilot_dataset(n_subjects=4, duration_s=45.0, master_seed=11)
_, pool = run_vanilla(pilot, WINDOW_S, 1, SPEC, master_seed=5)
stress_pool = pretrain_wesad(make_wesad_dataset(4, master_seed=7), WINDOW_S, 1, SPEC, master_seed=5)
stress_model = stress_pool.entries[0].get_weights()
print(f"pool: {len(pool.entries)} cognitive-load detectors, 1 stress detector\n")

# ---------------------------------------------- calibration + burden
# surveys are stitched from 30 s blocks that are load-like with probability
# 0.7 (gamified) or 0.4 (plain); 300 s gives ten blocks per survey, enough
# for the measured percentages to sit near those targets
survey = make_survey_dataset(
    master_seed=9,
    subjects={"11": ("1",), "12": ("1",)},
    calibration_duration_s=120.0,
    survey_duration_s=300.0,
)
by_subject = {}
for record in survey:
    by_subject.setdefault(record.subject_id, []).append(record)

print("subject session variant   load%  stress%  (calibration F1)")
for subject, records in sorted(by_subject.items()):
    calibration = [
        r for r in records
        if r.condition in (Condition.COGNITIVE_LOAD, Condition.BASELINE)
    ]
    result = calibrate_subject(pool, calibration, window_len_s=WINDOW_S)
    for record in records:
        if record.condition not in (Condition.SURVEY_GAMIFIED, Condition.SURVEY_PLAIN):
            continue
        row = burden_percentages(result, stress_model, record, window_len_s=WINDOW_S)
        load = "  X " if row.excluded else f"{row.cogload_pct_int():3d}%"
        variant = "gamified" if row.gamified else "plain"
        print(
            f"{row.subject_id:7s} {row.session_id:7s} {variant:8s} "
            f"{load}   {row.stress_pct_int():3d}%    ({row.calibration_f1:.3f})"
        )
print("(an X would mean no pool model beat F1 0.7 for that participant)\n")

# ------------------------------------------------------ stress leakage
# how often the stress detector fires during known cognitive load vs rest
calibration_records = [
    r for r in survey
    if r.condition in (Condition.COGNITIVE_LOAD, Condition.BASELINE)
]
leakage = stress_leakage_check(stress_model, calibration_records, window_len_s=WINDOW_S)
print("stress-flagged windows by condition:")
for (subject, condition), pct in sorted(leakage.items()):
    print(f"  subject {subject}, {condition:15s} {pct:5.1f}%")

# ----------------------------------------------------- response times
with tempfile.TemporaryDirectory() as d:
    csv_path = write_response_time_csv(
        Path(d) / "rt.csv",
        subjects={"11": ("1",), "12": ("1",)},
        questions_per_survey=8,
        jitter_s=0.8,
        master_seed=3,
    )
    table = response_time_analysis(csv_path)
print("\nmean response time per question (last question excluded):")
print(f"  gamified {table.mean_gamified_s:.2f} s  (n={table.n_gamified})")
print(f"  plain    {table.mean_non_gamified_s:.2f} s  (n={table.n_non_gamified})")
print("plain-minus-gamified by question position:")
for diff in table.position_differences[:4]:
    print(f"  q{diff.position}: {diff.mean_diff_s:+.2f} s over {diff.n_sessions} sessions")
