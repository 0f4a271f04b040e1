"""Generate a planted-anomaly benchmark and look at what was planted.

Run: python demos/01_synthetic_data.py
"""

import numpy as np

from oraclead.dataset import SyntheticSpec, gen_synthetic, label_runs, plant_segments

spec = SyntheticSpec(
    n_vars=6,
    length_train=2000,
    length_test=1500,
    seed=11,
    anomaly_types=frozenset({"point_spike", "level_shift", "correlation_break"}),
    anomaly_ratio=0.08,
)
train, test = gen_synthetic(spec)
print(f"train {train.values.shape}, test {test.values.shape}")
print(f"labelled fraction: {test.labels.mean():.3f} (asked for {spec.anomaly_ratio})")

for seg in plant_segments(spec):
    print(f"  {seg.kind:<18} steps {seg.start:>4}-{seg.stop - 1:<4} variables {seg.variables}")

# a correlation break keeps each variable's marginal but inverts its coupling
runs = label_runs(test.labels)
print(f"{len(runs)} labelled runs")
corr_train = np.corrcoef(train.values.T)
print("train correlation of x0 with the others:", np.round(corr_train[0, 1:], 2))
