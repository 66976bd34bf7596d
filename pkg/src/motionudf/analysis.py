"""Correlation between manifold distance and acceleration error, and the
ablation harnesses (segment length, energy terms)."""
import csv
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import metrics
from .energy import Observation
from .manifold import all_accelerations, sliding_windows
from .motion import CorruptionSpec, corrupt, read_native, synthetic_suite, write_native
from .optimize import EnergyConfig, optimize_sequence
from .pipeline import PipelineConfig, add_window_noise, train_model
from .udf import udf_forward


# --------------------------------------------------------------------------
# correlation

def joint_distances(model, windows):
    """Per-joint field values (N, J) for (N, T, K, 3) windows, J = model.joints."""
    acc = all_accelerations(np.asarray(windows, dtype=np.float64))
    return np.stack([udf_forward(model.nets[j], acc[:, j]) for j in model.joints], axis=1)


def joint_accel_errors(pred_windows, gt_windows):
    """Mean per-frame acceleration error of every joint in every window (N, K),
    in mm/frame²."""
    p = np.asarray(pred_windows, dtype=np.float64)
    g = np.asarray(gt_windows, dtype=np.float64)
    ap = p[:, 2:] - 2.0 * p[:, 1:-1] + p[:, :-2]
    ag = g[:, 2:] - 2.0 * g[:, 1:-1] + g[:, :-2]
    return 1000.0 * np.linalg.norm(ap - ag, axis=-1).mean(axis=1)


@dataclass
class CorrelationReport:
    joints: list
    per_joint: dict
    distances: np.ndarray
    errors: np.ndarray

    def fraction_above(self, threshold):
        ok = [c.defined and c.r > threshold for c in self.per_joint.values()]
        return float(np.mean(ok))

    def write_scatter_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["joint", "segment", "distance", "accel_error_mm"])
            for c, j in enumerate(self.joints):
                for n in range(self.distances.shape[0]):
                    w.writerow([j, n, repr(float(self.distances[n, c])), repr(float(self.errors[n, c]))])

    def to_dict(self):
        return {"per_joint": {str(j): c.to_dict() for j, c in self.per_joint.items()},
                "segments": int(self.distances.shape[0])}


def correlation_analysis(model, segments, gt_segments, scatter_path=None):
    """Pearson r, per joint, between field values and acceleration errors of
    corrupted segments against their clean counterparts."""
    segs = np.asarray([getattr(s, "positions", s) for s in segments], dtype=np.float64)
    gts = np.asarray([getattr(s, "positions", s) for s in gt_segments], dtype=np.float64)
    dist = joint_distances(model, segs)
    err = joint_accel_errors(segs, gts)[:, model.joints]
    per = {j: metrics.pearson(dist[:, c], err[:, c]) for c, j in enumerate(model.joints)}
    report = CorrelationReport(list(model.joints), per, dist, err)
    if scatter_path is not None:
        report.write_scatter_csv(scatter_path)
    return report


def corrupted_segment_set(sequences, n, T, noise_min=0.005, noise_max=0.15, seed=0):
    """``n`` clean windows drawn from ``sequences`` and Gaussian-noised copies
    of them; returns (noisy, clean), both (n, T, K, 3)."""
    rng = np.random.default_rng(seed)
    wins = np.concatenate([sliding_windows(s.positions, T) for s in sequences if s.num_frames >= T])
    clean = np.array(wins[rng.integers(len(wins), size=n)])
    return add_window_noise(clean, noise_min, noise_max, rng), clean


# --------------------------------------------------------------------------
# ablations

@dataclass
class Harness:
    """Shared settings for ablation runs on the synthetic suite."""

    train_sequences: int = 12
    train_frames: int = 96
    test_sequences: int = 4
    test_frames: int = 64
    kinds: tuple = ("walk-cycle", "arm-swing", "squat", "random-spline")
    fps: int = 30
    noise: float = 0.087
    frame_fraction: float = 1.0
    seed: int = 0
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    energy: EnergyConfig = field(default_factory=EnergyConfig)

    def train_suite(self):
        return synthetic_suite(self.train_sequences, self.train_frames, self.fps, self.seed, self.kinds)

    def test_suite(self):
        return synthetic_suite(self.test_sequences, self.test_frames, self.fps, self.seed + 1000, self.kinds)

    def corrupted(self, gt):
        out = []
        for i, s in enumerate(gt):
            spec = CorruptionSpec("gaussian-positions", self.noise, self.frame_fraction, seed=self.seed + i)
            out.append(corrupt(s, spec)[0])
        return out


TABLE_COLUMNS = ("mpjpe_mm", "pa_mpjpe_mm", "accel_err_mm_per_frame2")


def _denoise_suite(model, noisy, cfg):
    out = []
    for s in noisy:
        obs = Observation(s.positions)
        out.append(optimize_sequence(model, s, obs, cfg).sequence)
    return out


def _score(preds, gts):
    rows = [metrics.evaluate(p, g) for p, g in zip(preds, gts)]
    return {"mpjpe_mm": float(np.mean([r.mpjpe for r in rows])),
            "pa_mpjpe_mm": float(np.mean([r.pa_mpjpe for r in rows])),
            "accel_err_mm_per_frame2": float(np.mean([r.accel_err for r in rows]))}


def _save_run(run_dir, preds, gts):
    os.makedirs(run_dir, exist_ok=True)
    for i, (p, g) in enumerate(zip(preds, gts)):
        write_native(p, os.path.join(run_dir, f"pred_{i:03d}.mot"))
        write_native(g, os.path.join(run_dir, f"gt_{i:03d}.mot"))


def recompute_row(run_dir):
    """Metrics of a saved run, recomputed from its prediction/ground-truth files."""
    names = sorted(n for n in os.listdir(run_dir) if n.startswith("pred_"))
    preds = [read_native(os.path.join(run_dir, n)) for n in names]
    gts = [read_native(os.path.join(run_dir, n.replace("pred_", "gt_"))) for n in names]
    return _score(preds, gts)


def _write_table(path, rows, key):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([key] + list(TABLE_COLUMNS) + ["default"])
        for r in rows:
            w.writerow([r[key]] + [repr(r[c]) for c in TABLE_COLUMNS] + [int(r.get("default", False))])


def ablation_segment_length(lengths=(5, 8, 16, 24, 32), harness=None, out_dir=None, workers=1, default=16):
    """Train a model per segment length and denoise the same corrupted test
    suite with each; one row per length."""
    harness = harness or Harness()
    train = harness.train_suite()
    gts = harness.test_suite()
    noisy = harness.corrupted(gts)
    rows = []
    for L in lengths:
        pcfg = PipelineConfig.from_dict({**harness.pipeline.to_dict(), "T": int(L)})
        model = train_model(train, pcfg, workers=workers)
        ecfg = EnergyConfig.from_dict({**harness.energy.to_dict(), "window": int(L)})
        preds = _denoise_suite(model, noisy, ecfg)
        row = {"L": int(L), **_score(preds, gts), "default": int(L) == default}
        if out_dir is not None:
            row["run_dir"] = os.path.join(out_dir, f"L{int(L):02d}")
            _save_run(row["run_dir"], preds, gts)
        rows.append(row)
    if out_dir is not None:
        _write_table(os.path.join(out_dir, "segment_length.csv"), rows, "L")
        with open(os.path.join(out_dir, "segment_length.json"), "w") as fh:
            json.dump({"rows": rows, "harness": _harness_dict(harness)}, fh, indent=2)
    return rows


def ablation_terms(model, modes=("temporal-only", "motion-only", "fusion"), harness=None, out_dir=None):
    """Denoise one corrupted suite under each energy mode; one row per mode
    plus a row for the untouched noisy input."""
    harness = harness or Harness()
    gts = harness.test_suite()
    noisy = harness.corrupted(gts)
    rows = [{"mode": "noisy-input", **_score(noisy, gts)}]
    for mode in modes:
        cfg = EnergyConfig.from_dict({**harness.energy.to_dict(), "mode": mode})
        preds = _denoise_suite(model, noisy, cfg)
        row = {"mode": mode, **_score(preds, gts)}
        if out_dir is not None:
            row["run_dir"] = os.path.join(out_dir, mode)
            _save_run(row["run_dir"], preds, gts)
        rows.append(row)
    if out_dir is not None:
        _write_table(os.path.join(out_dir, "terms.csv"), rows, "mode")
        with open(os.path.join(out_dir, "terms.json"), "w") as fh:
            json.dump({"rows": rows, "harness": _harness_dict(harness)}, fh, indent=2)
    return rows


def _harness_dict(h):
    d = asdict(h)
    d["pipeline"] = h.pipeline.to_dict()
    d["energy"] = h.energy.to_dict()
    d["kinds"] = list(d["kinds"])
    return d
