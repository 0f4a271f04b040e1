"""The evaluation suite on a hand-made score series.

Point F1 only counts exact hits. Range F1 rewards covering a labelled
segment. Affiliation F1 gives partial credit to detections that land close
to a segment. VUS averages AUC over lag-dilated labels, which makes the
ranking metrics less sensitive to exactly where a segment's edges fall.

Run: python demos/03_metrics.py
"""

import numpy as np

from oraclead.evaluation import (
    EvalConfig,
    LabeledScores,
    adjust_labels_with_lag,
    affiliation_f1,
    auc_roc,
    evaluate_all,
    point_f1,
    range_f1,
    vus,
)

labels = np.zeros(60, dtype=int)
labels[10:13] = 1
labels[40:50] = 1

late = np.zeros(60, dtype=int)
late[14] = 1  # two steps after the first segment ends
late[44:47] = 1
print("predictions that miss the first segment by two steps:")
print(f"  point F1        {point_f1(late, labels)[2]:.3f}")
print(f"  range F1        {range_f1(late, labels):.3f}")
print(f"  affiliation F1  {affiliation_f1(late, labels):.3f}")

print("\nlabel dilation with omega=1:", adjust_labels_with_lag([0, 0, 1, 0, 0], 1))

rng = np.random.default_rng(0)
scores = rng.random(60) + 0.8 * np.roll(labels, 3)  # anomaly signal arrives 3 steps late
ls = LabeledScores(scores, labels)
print(f"\nAUC-ROC {auc_roc(ls):.3f}   VUS-ROC over omega 0..10 {vus(ls, range(11), 'roc'):.3f}")

report = evaluate_all(scores, labels, EvalConfig())
print(f"\nthreshold tau* = {report.tau_star:.3f} (best point F1 on a 200-step grid)")
for key, value in report.metrics().items():
    print(f"  {key:<8} {value:.3f}")
