"""A reduced compression sweep: rates for both classifiers at M/N = 0.5 and 1.0.

Uses 100 trials per point (80 train / 20 test) at N = 2048, so the rates
are rough; the full protocol is ``wbclassify sweep-compression``.
Takes about a minute on one core.
"""

import sys

from wbclassify import ExperimentConfig, emit_report, sweep_compression
from wbclassify.bench import CLASSES

cfg = ExperimentConfig(n_samples=2048, n_trials=100, train_trials=80, test_trials=20, compression_ratios=(0.5, 1.0))
report = sweep_compression(cfg)

# %% per-class rates
print("M/N   clf  " + "  ".join(f"{c.value:>6s}" for c in CLASSES))
for p in report.points:
    for name, res in sorted(p.results.items()):
        print(f"{p.axis_value:<5g} {name:4s} " + "  ".join(f"{res.rates[c]:6.2f}" for c in CLASSES))

# %% files: rates CSV, long CSV and the JSON report with confusion matrices
if len(sys.argv) > 1:
    for path in emit_report(report, sys.argv[1]):
        print("wrote", path)
