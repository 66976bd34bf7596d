"""Denoise a walk cycle corrupted by Gaussian position noise.

Runs the same optimizer three ways (temporal smoothing only, the learned
prior only, and both) and prints position and acceleration errors for each.
"""
from motionudf import metrics
from motionudf.energy import Observation
from motionudf.motion import CorruptionSpec, corrupt, synthesize_motion
from motionudf.optimize import EnergyConfig, optimize_sequence

from common import demo_model

model = demo_model()
gt = synthesize_motion("walk-cycle", 64, seed=11)
noisy, _ = corrupt(gt, CorruptionSpec("gaussian-positions", 0.087, seed=3))

print(f"{'input':<14} MPJPE {metrics.mpjpe(noisy, gt):6.1f} mm   accel {metrics.accel_error(noisy, gt):6.1f}")
for mode in ("temporal-only", "motion-only", "fusion"):
    res = optimize_sequence(model, noisy, Observation(noisy.positions), EnergyConfig(mode=mode))
    out = res.sequence
    print(f"{mode:<14} MPJPE {metrics.mpjpe(out, gt):6.1f} mm   accel {metrics.accel_error(out, gt):6.1f}"
          f"   (final energy {res.log[-1]['total']:.3f})")
