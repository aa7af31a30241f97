# Route the canonical 60 s fluctuation trace and count gating switches
# with a bare threshold versus the hysteresis band.
#
# Pass --plot to draw the lidar reliability against both gate states
# (needs matplotlib).

import sys

import numpy as np

from modroute import RoutingConfig, canonical_table3_trace, compare_switching
from modroute.backends import rule_based_reliability
from modroute.metrics import hysteresis_states, threshold_states

config = RoutingConfig()
trace = canonical_table3_trace()
t = np.array([f.timestamp for f in trace])
rel = np.array([rule_based_reliability(f) for f in trace])

report = compare_switching(rel, config)
for name, n in report.threshold.items():
    print(f"{name:7s} threshold {n:3d}   hysteresis {report.hysteresis[name]:3d}")
print(f"total   threshold {report.threshold_total:3d}   hysteresis {report.hysteresis_total:3d}"
      f"   reduction {report.reduction_percent:.1f}%")

if "--plot" in sys.argv:
    import matplotlib.pyplot as plt

    thr = threshold_states(rel, config.theta)
    hys = hysteresis_states(rel, config.theta, config.delta)
    fig, (ax0, ax1) = plt.subplots(2, 1, sharex=True, figsize=(9, 5))
    ax0.plot(t, rel[:, 1], label="lidar reliability")
    ax0.axhspan(0.5 - config.delta, 0.5 + config.delta, color="0.9", label="band")
    ax0.legend(loc="lower right")
    ax1.step(t, thr[:, 1] + 0.05, where="post", label="threshold")
    ax1.step(t, hys[:, 1], where="post", label="hysteresis")
    ax1.set_xlabel("t [s]")
    ax1.legend(loc="lower right")
    plt.show()
