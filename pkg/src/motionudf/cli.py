"""Command line front-end: ``motionudf <subcommand> [flags]``.

Every run writes its outputs into one directory (``--out``, or
``$MOTIONUDF_OUTPUT_DIR/<subcommand>``), together with ``summary.json`` and
``manifest.json``. The manifest records the argument vector, seed, thread
count, config hashes and sha256 digests of every input and output, which is
what ``reproduce`` replays and compares against.

Exit codes: 0 ok, 1 unexpected, 2 bad flags, 3 bad config, 4 missing input,
5 invalid data, 6 unreadable file, 7 non-finite numbers, 8 replay drift,
9 output already exists.
"""
import argparse
import hashlib
import json
import logging
import os
import shutil
import sys
import tempfile
import time

import numpy as np

from . import __version__
from . import kinematics as kin
from .errors import ConfigError, DriftError, MissingInputError, MotionUdfError, OutputExistsError, ValidationError

log = logging.getLogger("motionudf")

SUBCOMMANDS = ("synth", "ingest", "corrupt", "build-zero-level", "label", "train", "denoise", "fit-partial",
               "smooth", "inbetween", "generate", "eval", "correlate", "ablate", "reproduce")
# written by every run but never compared on replay: they hold wall-clock times and paths
BOOKKEEPING = ("summary.json", "manifest.json")


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(d):
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _threads(value):
    try:
        n = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"thread count must be an integer, got {value!r}") from None
    if n < 1:
        raise ConfigError("thread count must be >= 1")
    return n


def _int_list(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def _float_list(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def _read_json(path):
    if not os.path.exists(path):
        raise MissingInputError(f"no such file: {path}")
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc})") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return d


class Run:
    """Bookkeeping for one subcommand invocation."""

    def __init__(self, args, argv):
        self.args = args
        self.argv = list(argv)
        self.out = os.path.abspath(args.out)
        os.makedirs(self.out, exist_ok=True)
        self.inputs = {}
        self.outputs = []
        self.configs = {}
        self.start = time.perf_counter()

    def input(self, path):
        if path is None:
            return None
        if not os.path.exists(path):
            raise MissingInputError(f"no such file: {path}")
        self.inputs[os.path.abspath(path)] = sha256_file(path)
        return path

    def output(self, name):
        path = os.path.join(self.out, name)
        if os.path.exists(path):
            raise OutputExistsError(f"{path} exists; outputs are write-once, pick a fresh --out")
        self.outputs.append(name)
        return path

    def config(self, name, d):
        self.configs[name] = {"sha256": config_hash(d), "values": d}

    def finish(self, summary):
        artifacts = {n: sha256_file(os.path.join(self.out, n)) for n in sorted(set(self.outputs))
                     if os.path.isfile(os.path.join(self.out, n))}
        doc = {"subcommand": self.args.command, "status": "ok", "seed": self.args.seed,
               "threads": self.args.threads, "outputs": sorted(artifacts),
               "elapsed_s": round(time.perf_counter() - self.start, 3), **summary}
        _dump_json(self.output("summary.json"), doc)
        manifest = {"tool": "motionudf", "version": __version__, "subcommand": self.args.command,
                    "argv": self.argv, "cwd": os.getcwd(), "seed": self.args.seed,
                    "threads": self.args.threads, "configs": self.configs, "inputs": self.inputs,
                    "artifacts": artifacts}
        _dump_json(self.output("manifest.json"), manifest)
        return doc


def _dump_json(path, d):
    with open(path, "w") as fh:
        json.dump(d, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


# --------------------------------------------------------------------------
# shared loaders

def _skeleton(run):
    path = getattr(run.args, "skeleton", None)
    return kin.load_skeleton(run.input(path)) if path else None


def _motion(run, path):
    from .motion import read_native

    return read_native(run.input(path))


def _model(run):
    from .udf import load_model

    return load_model(run.input(run.args.model))


def _energy_config(run, **defaults):
    from .optimize import EnergyConfig

    a = run.args
    d = dict(defaults)
    if a.config:
        d.update(_read_json(run.input(a.config)))
    flags = {"mode": a.mode, "lambda_obs": a.lambda_obs, "lambda_prior": a.lambda_prior,
             "iterations": a.iterations, "lr": a.lr, "space": a.space, "rotation": a.rotation}
    for key in ("kernel", "ema_factor", "window"):
        if hasattr(a, key):
            flags[key] = getattr(a, key)
    d.update({k: v for k, v in flags.items() if v is not None})
    try:
        cfg = EnergyConfig.from_dict(d)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    run.config("energy", cfg.to_dict())
    return cfg


def _pipeline_config(run, path, a):
    from .pipeline import PRESETS, PipelineConfig

    # preset, then config file, then flags
    d = PRESETS[a.preset](seed=a.seed).to_dict() if getattr(a, "preset", None) else {}
    user = _read_json(run.input(path)) if path else {}
    train = {**d.pop("train", {}), **user.pop("train", {})}
    d.update(user)
    flags = {"T": getattr(a, "T", None), "fine_tune_epochs": getattr(a, "fine_tune_epochs", None),
             "noise_max": getattr(a, "noise_max", None)}
    d.update({k: v for k, v in flags.items() if v is not None})
    d.setdefault("seed", a.seed)
    tflags = {"epochs": getattr(a, "epochs", None), "lr": getattr(a, "train_lr", None),
              "batch_size": getattr(a, "batch_size", None), "lambda_eik": getattr(a, "lambda_eik", None),
              "noise_ratio": getattr(a, "noise_ratio", None)}
    if getattr(a, "hidden", None):
        tflags["hidden"] = _int_list(a.hidden)
    train.update({k: v for k, v in tflags.items() if v is not None})
    train.setdefault("seed", a.seed)
    if "hidden" in train:
        train["hidden"] = tuple(train["hidden"])
    try:
        return PipelineConfig.from_dict({**d, "train": train})
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


# --------------------------------------------------------------------------
# data subcommands

def cmd_synth(run):
    from .motion import MOTION_KINDS, synthesize_motion, write_native

    a = run.args
    rng = np.random.default_rng(a.seed)
    names = []
    for i in range(a.count):
        kind = a.kind if a.kind != "mixed" else MOTION_KINDS[i % len(MOTION_KINDS)]
        seed = a.seed if a.count == 1 else int(rng.integers(2**63 - 1))
        seq = synthesize_motion(kind, a.frames, a.fps, seed)
        name = "motion.mot" if a.count == 1 else f"motion_{i:03d}.mot"
        write_native(seq, run.output(name))
        names.append({"file": name, "kind": kind, "seed": seed})
    kin.save_skeleton(kin.default_skeleton(), run.output("skeleton.json"))
    return {"sequences": names, "frames": a.frames, "fps": a.fps}


def cmd_ingest(run):
    from .bvh import parse_bvh
    from .motion import resample, write_native

    a = run.args
    with open(run.input(a.input)) as fh:
        seq, meta = parse_bvh(fh.read(), scale=a.scale, include_end_sites=not a.no_end_sites)
    src_fps = seq.fps
    if a.fps is not None and a.fps != seq.fps:
        seq = resample(seq, a.fps, interpolate=a.interpolate)
    write_native(seq, run.output("motion.mot"))
    try:
        skel = kin.Skeleton(parents=meta["parents"], offsets=meta["offsets"], names=seq.joints)
    except ValidationError as exc:
        # zero-length bones cannot drive rotation-space optimization; positions are still usable
        log.warning("no skeleton written: %s", exc)
        skel = None
    if skel is not None:
        kin.save_skeleton(skel, run.output("skeleton.json"))
    return {"frames": seq.num_frames, "joints": seq.num_joints, "source_fps": src_fps, "fps": seq.fps,
            "skeleton": skel is not None}


def cmd_corrupt(run):
    from .motion import CorruptionSpec, corrupt, write_native

    a = run.args
    seq = _motion(run, a.input)
    spec = CorruptionSpec(a.kind, a.magnitude, a.fraction, seed=a.seed,
                          joints=_int_list(a.joints) if a.joints else None)
    run.config("corruption", {"kind": spec.kind, "magnitude": spec.magnitude,
                              "frame_fraction": spec.frame_fraction, "seed": spec.seed,
                              "joints": list(spec.joints) if spec.joints else None})
    out, mask = corrupt(seq, spec, _skeleton(run))
    write_native(out, run.output("motion.mot"))
    np.save(run.output("mask.npy"), np.asarray(mask, dtype=bool))
    disp = float(np.linalg.norm(out.positions - seq.positions, axis=-1).mean())
    return {"kind": a.kind, "mean_displacement_m": disp, "missing_entries": int(np.count_nonzero(mask))}


def cmd_build_zero_level(run):
    from .manifold import build_zero_level, save_zero_level
    from .pipeline import joint_seed

    a = run.args
    seqs = [_motion(run, p) for p in a.inputs]
    K = seqs[0].num_joints
    joints = list(range(K)) if a.joints == "all" else _int_list(a.joints)
    if a.joints == "all":
        joints = [j for j in joints if j not in kin.EXCLUDED_JOINTS]
    sizes = {}
    for j in joints:
        if not 0 <= j < K:
            raise ValidationError(f"joint {j} out of range for {K} joints")
        zl = build_zero_level(seqs, a.T, j, a.stride, a.cap, seed=joint_seed(a.seed, j), k=a.k)
        save_zero_level(zl, run.output(f"zl_j{j:02d}.zls"))
        sizes[j] = zl.size
    return {"T": a.T, "points_per_joint": sizes}


def cmd_label(run):
    from .manifold import all_accelerations, label_dataset, load_zero_level, sliding_windows, write_labels_csv

    a = run.args
    zl = load_zero_level(run.input(a.zero_level))
    wins = [sliding_windows(_motion(run, p).positions, zl.T) for p in a.inputs]
    acc = all_accelerations(np.concatenate(wins))[:, zl.joint_index]
    if a.max_samples and len(acc) > a.max_samples:
        idx = np.sort(np.random.default_rng(a.seed).choice(len(acc), a.max_samples, replace=False))
        acc = acc[idx]
    samples = label_dataset(acc, zl, a.k, a.method, a.metric)
    write_labels_csv(run.output("labels.csv"), samples, zl.joint_index)
    d = np.array([s.d for s in samples])
    return {"joint": zl.joint_index, "samples": len(samples), "d_mean": float(d.mean()),
            "d_max": float(d.max())}


def cmd_train(run):
    from .pipeline import train_model
    from .udf import save_model

    a = run.args
    seqs = [_motion(run, p) for p in a.inputs]
    cfg = _pipeline_config(run, a.config, a)
    run.config("pipeline", cfg.to_dict())
    logs = os.path.join(run.out, "logs")
    if os.path.exists(logs):
        raise OutputExistsError(f"{logs} exists; outputs are write-once, pick a fresh --out")
    os.makedirs(logs)
    model = train_model(seqs, cfg, _skeleton(run), workers=a.threads, log_dir=logs)
    save_model(model, run.output("model.ckpt"))
    for name in sorted(os.listdir(logs)):
        run.outputs.append(os.path.join("logs", name))
    return {"joints": list(model.joints), "T": model.T, "fps": model.fps}


# --------------------------------------------------------------------------
# downstream tasks

def _task_summary(model, result, ref=None):
    from .energy import energy_motion

    first, last = result.log[0], result.log[-1]
    out = {"iterations": last["iter"], "initial": first, "final": last,
           "energy_motion_output": float(energy_motion(model, result.sequence.positions))}
    if ref is not None:
        out["energy_motion_input"] = float(energy_motion(model, ref.positions))
    return out


def cmd_denoise(run):
    from .motion import write_native
    from .tasks import denoise

    model = _model(run)
    seq = _motion(run, run.args.input)
    res = denoise(model, seq, _energy_config(run), _skeleton(run))
    write_native(res.sequence, run.output("denoised.mot"))
    res.write_log(run.output("log.csv"))
    return _task_summary(model, res, seq)


def cmd_fit_partial(run):
    from .motion import write_native
    from .tasks import fit_partial

    model = _model(run)
    seq = _motion(run, run.args.input)
    mask = np.load(run.input(run.args.mask))
    res = fit_partial(model, seq, mask, _energy_config(run), _skeleton(run))
    write_native(res.sequence, run.output("fitted.mot"))
    res.write_log(run.output("log.csv"))
    return {**_task_summary(model, res, seq), "missing_entries": int(np.count_nonzero(mask))}


def cmd_smooth(run):
    from .motion import write_native
    from .tasks import smooth

    model = _model(run)
    seq = _motion(run, run.args.input)
    res = smooth(model, seq, _energy_config(run, window=model.T), _skeleton(run))
    write_native(res.sequence, run.output("smoothed.mot"))
    res.write_log(run.output("log.csv"))
    return _task_summary(model, res, seq)


def cmd_inbetween(run):
    from .motion import write_native
    from .tasks import INBETWEEN_DEFAULTS, inbetween, parse_frames

    model = _model(run)
    seq = _motion(run, run.args.input)
    keys = parse_frames(run.args.keyframes)
    cfg = _energy_config(run, **INBETWEEN_DEFAULTS)
    res, base = inbetween(model, seq, keys, cfg, _skeleton(run))
    write_native(res.sequence, run.output("inbetween.mot"))
    write_native(base, run.output("interpolated.mot"))
    res.write_log(run.output("log.csv"))
    return {**_task_summary(model, res, base), "keyframes": keys}


def cmd_generate(run):
    from .motion import write_native
    from .tasks import GENERATE_DEFAULTS, generate

    model = _model(run)
    cfg = _energy_config(run, **GENERATE_DEFAULTS)
    res, init = generate(model, run.args.poses, run.args.seed, cfg, _skeleton(run))
    res.sequence.validate()
    write_native(init, run.output("initial.mot"))
    write_native(res.sequence, run.output("generated.mot"))
    res.write_log(run.output("log.csv"))
    return _task_summary(model, res, init)


# --------------------------------------------------------------------------
# evaluation

def cmd_eval(run):
    from .metrics import evaluate

    pred = _motion(run, run.args.pred)
    gt = _motion(run, run.args.gt)
    report = evaluate(pred, gt).to_dict()
    _dump_json(run.output("metrics.json"), report)
    return {k: v for k, v in report.items() if k != "per_joint"}


def cmd_correlate(run):
    from .analysis import correlation_analysis, corrupted_segment_set
    from .motion import synthetic_suite

    a = run.args
    model = _model(run)
    if a.inputs:
        seqs = [_motion(run, p) for p in a.inputs]
    else:
        seqs = synthetic_suite(a.suite_size, a.suite_frames, model.fps, a.seed + 1000)
    noisy, clean = corrupted_segment_set(seqs, a.segments, model.T, a.noise_min, a.noise_max, a.seed)
    rep = correlation_analysis(model, noisy, clean, run.output("scatter.csv"))
    doc = {**rep.to_dict(), "fraction_above_0.8": rep.fraction_above(0.8)}
    _dump_json(run.output("correlation.json"), doc)
    return doc


def cmd_ablate(run):
    from .analysis import Harness, ablation_segment_length, ablation_terms
    from .optimize import EnergyConfig

    a = run.args
    pcfg = _pipeline_config(run, a.pipeline_config, a)
    ed = _read_json(run.input(a.energy_config)) if a.energy_config else {}
    try:
        ecfg = EnergyConfig.from_dict(ed)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    h = Harness(train_sequences=a.train_sequences, train_frames=a.train_frames,
                test_sequences=a.test_sequences, test_frames=a.test_frames, noise=a.noise,
                seed=a.seed, pipeline=pcfg, energy=ecfg)
    run.config("pipeline", pcfg.to_dict())
    run.config("energy", ecfg.to_dict())
    before = _listing(run.out)
    if a.study == "segment-length":
        rows = ablation_segment_length(_int_list(a.lengths), h, run.out, workers=a.threads)
    else:
        if not a.model:
            raise ConfigError("--model is required for the terms study")
        rows = ablation_terms(_model(run), tuple(a.modes.split(",")), h, run.out)
    run.outputs += sorted(_listing(run.out) - before)
    return {"study": a.study, "rows": rows}


def _listing(root):
    out = set()
    for d, _, files in os.walk(root):
        for f in files:
            out.add(os.path.relpath(os.path.join(d, f), root))
    return out


# --------------------------------------------------------------------------
# replay

def _strip_flags(argv, names):
    out, skip = [], False
    for tok in argv:
        if skip:
            skip = False
            continue
        if tok in names:
            skip = True
            continue
        if any(tok.startswith(n + "=") for n in names):
            continue
        out.append(tok)
    return out


def replay_manifest(path, threads=None, workdir=None):
    """Re-run the command recorded in a run manifest and compare artifacts.

    Returns a list of drift records (empty when every artifact matches). A
    manifest may instead hold ``{"runs": [manifest paths]}``; each listed run
    is replayed in turn."""
    doc = _read_json(path)
    if "runs" in doc:
        base = os.path.dirname(os.path.abspath(path))
        drift = []
        for p in doc["runs"]:
            drift += replay_manifest(os.path.join(base, p), threads, workdir)
        return drift
    if "argv" not in doc or "artifacts" not in doc:
        raise ConfigError(f"{path}: not a run manifest")
    own = workdir is None
    workdir = workdir or tempfile.mkdtemp(prefix="motionudf-replay-")
    out = tempfile.mkdtemp(prefix="run-", dir=workdir)
    argv = _strip_flags(doc["argv"], ("--out", "--threads"))
    argv += ["--out", out, "--threads", str(threads or doc.get("threads", 1))]
    cwd = os.getcwd()
    try:
        os.chdir(doc.get("cwd", cwd))
        code = _dispatch(argv)
    finally:
        os.chdir(cwd)
    drift = []
    if code != 0:
        drift.append({"run": path, "artifact": None, "reason": f"replay exited with {code}"})
    else:
        for name, digest in sorted(doc["artifacts"].items()):
            p = os.path.join(out, name)
            got = sha256_file(p) if os.path.isfile(p) else None
            if got != digest:
                drift.append({"run": path, "artifact": name, "expected": digest, "got": got})
        extra = _listing(out) - set(doc["artifacts"]) - set(BOOKKEEPING)
        drift += [{"run": path, "artifact": n, "reason": "not in manifest"} for n in sorted(extra)]
    if own:
        shutil.rmtree(workdir, ignore_errors=True)
    return drift


def cmd_reproduce(run):
    work = os.path.join(run.out, "replay")
    if os.path.exists(work):
        raise OutputExistsError(f"{work} exists; pick a fresh --out")
    os.makedirs(work)
    drift = replay_manifest(run.input(run.args.manifest), run.args.threads, work)
    _dump_json(run.output("drift.json"), {"drift": drift})
    if not run.args.keep:
        shutil.rmtree(work, ignore_errors=True)
    if drift:
        for d in drift:
            print(f"drift: {d.get('artifact')} ({d.get('reason') or 'digest differs'}) in {d['run']}",
                  file=sys.stderr)
        run.finish({"drift": len(drift), "status": "drift"})
        raise DriftError(f"{len(drift)} artifact(s) differ from the manifest")
    return {"drift": 0}


# --------------------------------------------------------------------------
# parser

def _common():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("run options")
    g.add_argument("--seed", type=int, default=0, help="global seed; every random choice derives from it (default 0)")
    g.add_argument("--threads", type=_threads, default=None,
                   help="worker processes for parallel stages (default $MOTIONUDF_THREADS or 1)")
    g.add_argument("--out", default=None,
                   help="run directory for all outputs (default $MOTIONUDF_OUTPUT_DIR/<subcommand>, "
                        "else runs/<subcommand>)")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def _energy_flags(p):
    g = p.add_argument_group("energy")
    g.add_argument("--model", required=True, help="trained model checkpoint (.ckpt)")
    g.add_argument("--config", help="JSON energy config; flags below override its values")
    g.add_argument("--mode", choices=("temporal-only", "motion-only", "fusion"), help="prior term(s) to use")
    g.add_argument("--lambda-obs", type=float, help="weight of the observation term")
    g.add_argument("--lambda-prior", type=float, help="weight of the prior term")
    g.add_argument("--iterations", type=int, help="Adam iterations")
    g.add_argument("--lr", type=float, help="Adam learning rate")
    g.add_argument("--space", choices=("auto", "rotations", "positions"),
                   help="optimize joint rotations (with forward kinematics) or free positions")
    g.add_argument("--rotation", choices=("6d", "axis-angle"), help="rotation parameterization")
    g.add_argument("--skeleton", help="skeleton JSON (default: bundled 24-joint skeleton)")


def _train_flags(p, config_flag="--config"):
    g = p.add_argument_group("training")
    g.add_argument("--preset", choices=("full", "desk"),
                   help="starting configuration: 'full' (256-wide networks) or 'desk' (small, CPU-friendly)")
    g.add_argument(config_flag, dest=config_flag.lstrip("-").replace("-", "_"),
                   help="JSON pipeline config (keys of PipelineConfig, nested 'train' for TrainConfig)")
    g.add_argument("--T", type=int, help="segment length in frames")
    g.add_argument("--epochs", type=int, help="training epochs per joint")
    g.add_argument("--hidden", help="comma-separated hidden widths, e.g. 256,256,256")
    g.add_argument("--train-lr", type=float, help="Adam learning rate for training")
    g.add_argument("--batch-size", type=int, help="minibatch size")
    g.add_argument("--lambda-eik", type=float, help="Eikonal loss weight")
    g.add_argument("--noise-ratio", type=float, help="negatives per zero-level point")
    g.add_argument("--noise-max", type=float, help="largest mean displacement (m) of training noise")
    g.add_argument("--fine-tune-epochs", type=int, help="epochs of rotation-noise fine-tuning (0 = off)")


def build_parser():
    from .motion import CORRUPTION_KINDS, MOTION_KINDS

    common = _common()
    parser = argparse.ArgumentParser(prog="motionudf", description="Per-joint acceleration distance fields "
                                     "as a motion prior: data, training, optimization and evaluation.")
    parser.add_argument("--version", action="version", version=f"motionudf {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="subcommand")

    def add(name, help_):
        return sub.add_parser(name, parents=[common], help=help_, description=help_)

    p = add("synth", "Synthesize smooth motion on the 24-joint skeleton.")
    p.add_argument("--kind", choices=MOTION_KINDS + ("mixed",), default="walk-cycle",
                   help="motion family; 'mixed' cycles through all of them")
    p.add_argument("--frames", type=int, default=128, help="frames per sequence")
    p.add_argument("--fps", type=int, default=30, help="frame rate")
    p.add_argument("--count", type=int, default=1, help="number of sequences")

    p = add("ingest", "Convert a BVH file to the native motion format.")
    p.add_argument("--input", required=True, help="BVH file")
    p.add_argument("--scale", type=float, default=1.0, help="multiplier from file units to meters")
    p.add_argument("--no-end-sites", action="store_true", help="drop End Site joints")
    p.add_argument("--fps", type=int, help="resample to this frame rate")
    p.add_argument("--interpolate", action="store_true", help="allow non-integer rate ratios by interpolation")

    p = add("corrupt", "Damage a motion with noise or occlusion; writes the motion and a missing-entry mask.")
    p.add_argument("--input", required=True, help="native motion file")
    p.add_argument("--kind", choices=CORRUPTION_KINDS, default="gaussian-positions", help="corruption model")
    p.add_argument("--magnitude", type=float, default=0.087,
                   help="mean displacement (m), rotation noise half-width (rad) or occlusion strength")
    p.add_argument("--fraction", type=float, default=1.0, help="fraction of frames affected")
    p.add_argument("--joints", help="comma-separated joints to affect (default: all but the root)")
    p.add_argument("--skeleton", help="skeleton JSON for rotation corruption")

    p = add("build-zero-level", "Collect clean acceleration vectors per joint.")
    p.add_argument("--inputs", nargs="+", required=True, help="clean native motion files")
    p.add_argument("--T", type=int, default=16, help="segment length in frames")
    p.add_argument("--joints", default="all", help="comma-separated joints or 'all' (non-excluded joints)")
    p.add_argument("--stride", type=int, default=1, help="window stride")
    p.add_argument("--cap", type=int, default=50_000, help="maximum points per joint")
    p.add_argument("--k", type=int, default=5, help="neighbours used for labels")

    p = add("label", "Label acceleration vectors of motion windows by KNN distance; writes CSV.")
    p.add_argument("--zero-level", required=True, help="zero-level set file (.zls)")
    p.add_argument("--inputs", nargs="+", required=True, help="native motion files to label")
    p.add_argument("--k", type=int, default=5, help="neighbours averaged")
    p.add_argument("--method", choices=("scan", "vptree"), default="scan", help="search method")
    p.add_argument("--metric", choices=("l1", "l2"), default="l1", help="distance")
    p.add_argument("--max-samples", type=int, help="random subset size")

    p = add("train", "Train one distance field per joint.")
    p.add_argument("--inputs", nargs="+", required=True, help="clean native motion files")
    p.add_argument("--skeleton", help="skeleton JSON (default: bundled 24-joint skeleton)")
    _train_flags(p)

    p = add("denoise", "Optimize a noisy motion against the prior and its own observations.")
    p.add_argument("--input", required=True, help="native motion file")
    _energy_flags(p)

    p = add("fit-partial", "Like denoise, but masked (frame, joint) entries are not observed.")
    p.add_argument("--input", required=True, help="native motion file")
    p.add_argument("--mask", required=True, help=".npy boolean (F, K) mask, True = missing")
    _energy_flags(p)

    p = add("smooth", "Sliding-window refinement of a jittery motion.")
    p.add_argument("--input", required=True, help="native motion file")
    p.add_argument("--kernel", choices=("triangular", "uniform"), help="window merge kernel")
    p.add_argument("--ema-factor", type=float, help="root orientation smoothing factor in (0, 1]")
    _energy_flags(p)

    p = add("inbetween", "Fill the gaps between key frames and refine them under the prior.")
    p.add_argument("--input", required=True, help="native motion file holding the key frames")
    p.add_argument("--keyframes", default="0-5,15", help="frames kept fixed, e.g. 0-5,15")
    _energy_flags(p)

    p = add("generate", "Turn randomly drawn poses into motion under the prior alone.")
    p.add_argument("--poses", type=int, default=16, help="number of random poses (frames)")
    _energy_flags(p)

    p = add("eval", "Compare a predicted motion with ground truth.")
    p.add_argument("--pred", required=True, help="predicted native motion")
    p.add_argument("--gt", required=True, help="ground-truth native motion")

    p = add("correlate", "Correlate field values with acceleration error on corrupted segments.")
    p.add_argument("--model", required=True, help="trained model checkpoint")
    p.add_argument("--inputs", nargs="*", help="clean native motions (default: a synthetic suite)")
    p.add_argument("--segments", type=int, default=500, help="number of corrupted segments")
    p.add_argument("--noise-min", type=float, default=0.005, help="smallest mean displacement (m)")
    p.add_argument("--noise-max", type=float, default=0.15, help="largest mean displacement (m)")
    p.add_argument("--suite-size", type=int, default=8, help="synthetic sequences when no inputs are given")
    p.add_argument("--suite-frames", type=int, default=96, help="frames per synthetic sequence")

    p = add("ablate", "Run an ablation study on the synthetic suite.")
    p.add_argument("--study", choices=("segment-length", "terms"), required=True, help="which study")
    p.add_argument("--lengths", default="5,8,16,24,32", help="segment lengths for the segment-length study")
    p.add_argument("--modes", default="temporal-only,motion-only,fusion", help="energy modes for the terms study")
    p.add_argument("--model", help="model checkpoint (terms study)")
    p.add_argument("--energy-config", help="JSON energy config used for denoising")
    p.add_argument("--train-sequences", type=int, default=12, help="synthetic training sequences")
    p.add_argument("--train-frames", type=int, default=96, help="frames per training sequence")
    p.add_argument("--test-sequences", type=int, default=4, help="synthetic test sequences")
    p.add_argument("--test-frames", type=int, default=64, help="frames per test sequence")
    p.add_argument("--noise", type=float, default=0.087, help="mean displacement (m) of test corruption")
    _train_flags(p, "--pipeline-config")

    p = add("reproduce", "Replay the run(s) in a manifest and byte-compare their artifacts.")
    p.add_argument("--manifest", required=True, help="manifest.json of a run, or a {\"runs\": [...]} list")
    p.add_argument("--keep", action="store_true", help="keep the replayed outputs under <out>/replay")
    return parser


HANDLERS = {name: globals()["cmd_" + name.replace("-", "_")] for name in SUBCOMMANDS}


def _dispatch(argv):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads is None:
            args.threads = _threads(os.environ.get("MOTIONUDF_THREADS", "1"))
        if args.out is None:
            args.out = os.path.join(os.environ.get("MOTIONUDF_OUTPUT_DIR", "runs"), args.command)
        run = Run(args, argv)
        summary = HANDLERS[args.command](run)
        doc = run.finish(summary)
        print(json.dumps({"status": "ok", "out": run.out, "outputs": doc["outputs"]}))
        return 0
    except MotionUdfError as exc:
        print(f"motionudf {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"motionudf {args.command}: MissingInputError: {exc}", file=sys.stderr)
        return MissingInputError.exit_code


def main(argv=None):
    return _dispatch(sys.argv[1:] if argv is None else list(argv))


if __name__ == "__main__":
    sys.exit(main())
