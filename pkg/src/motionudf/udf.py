"""Per-joint unsigned distance fields: a softplus MLP over one joint's
acceleration vector, its exact gradients, the training losses, an Adam
training loop, and checkpoint files.

The network regresses ``ln(d + 1)`` where ``d`` is the KNN distance of the
input to the zero-level set. The Eikonal term needs the gradient of
``||∇_x f||`` with respect to the weights; it is computed exactly by pushing
a tangent through the network (forward mode) and back-propagating through
both the primal and the tangent passes.
"""
import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from . import container
from .errors import CheckpointError, DimensionError, NumericalError, ValidationError
from .kinematics import JointWeights
from .manifold import LabeledSample, accel_dim, normalization_stats
from .optim import Adam

log = logging.getLogger(__name__)

CKPT_MAGIC = b"MUDFCKPT"
CKPT_VERSION = 1


def softplus(z):
    return np.logaddexp(0.0, z)


@dataclass
class JointUdf:
    """One joint's distance field. ``params`` is [W1, b1, ..., WL, bL] with
    ``W`` shaped (fan_in, fan_out)."""

    joint_index: int
    T: int
    params: list
    mean: np.ndarray
    std: np.ndarray
    activation: str = "softplus"
    output: str = "softplus"

    def __post_init__(self):
        if self.activation != "softplus" or self.output != "softplus":
            raise ValidationError("only softplus activations are implemented")
        if self.params[0].shape[0] != accel_dim(self.T):
            raise DimensionError("first layer does not match the acceleration dimension")

    @property
    def input_dim(self):
        return self.params[0].shape[0]

    @property
    def dims(self):
        return [self.params[0].shape[0]] + [W.shape[1] for W in self.params[0::2]]

    def copy(self):
        return JointUdf(self.joint_index, self.T, [p.copy() for p in self.params],
                        self.mean.copy(), self.std.copy(), self.activation, self.output)


def init_joint_udf(joint_index, T, hidden=(256, 256, 256), mean=None, std=None, seed=0):
    D = accel_dim(T)
    rng = np.random.default_rng(seed)
    dims = [D] + list(hidden) + [1]
    params = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        params.append(rng.normal(0.0, np.sqrt(1.0 / fan_in), size=(fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    mean = np.zeros(D) if mean is None else np.asarray(mean, dtype=np.float64)
    std = np.ones(D) if std is None else np.asarray(std, dtype=np.float64)
    return JointUdf(joint_index, T, params, mean.copy(), std.copy())


def calibrate_init(net, X, y):
    """Data-dependent rescaling of a fresh net: each layer's pre-activations
    get zero mean and unit spread on ``X``, and the output bias is set so the
    initial prediction matches the mean target. Without this, inputs lying
    hundreds of standard deviations from the zero-level mean saturate the
    output softplus and its gradient vanishes."""
    U = (np.asarray(X, dtype=np.float64) - net.mean) / net.std
    h = U
    n_layers = len(net.params) // 2
    for l in range(n_layers):
        W, b = net.params[2 * l], net.params[2 * l + 1]
        z = h @ W
        if l < n_layers - 1:
            sd = z.std(axis=0)
            W /= np.where(sd > 0, sd, 1.0)
            b[:] = -(h @ W).mean(axis=0)
            h = softplus(h @ W + b)
        else:
            sd = z.std()
            W /= sd if sd > 0 else 1.0
            target = max(float(np.mean(y)), 1e-3)
            b[:] = np.log(np.expm1(target)) - float((h @ W).mean())
    return net


def _check_input(net, X):
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != net.input_dim:
        raise DimensionError(f"expected {net.input_dim}-dim acceleration vectors, got {X.shape[-1]}")
    return X


def _forward(params, U):
    """Primal pass from normalized inputs; returns f (B,) and layer caches."""
    hs, zs = [U], []
    h = U
    n_layers = len(params) // 2
    for l in range(n_layers):
        z = h @ params[2 * l] + params[2 * l + 1]
        zs.append(z)
        h = softplus(z)
        if l < n_layers - 1:
            hs.append(h)
    return h[:, 0], hs, zs


def udf_forward(net, accel, normalized=False):
    """Distance-field value(s) ``f >= 0``; accepts (D,) or (B, D)."""
    X = _check_input(net, accel)
    single = X.ndim == 1
    X2 = np.atleast_2d(X)
    U = X2 if normalized else (X2 - net.mean) / net.std
    f, _, _ = _forward(net.params, U)
    return float(f[0]) if single else f


def _input_grad_from_cache(params, hs, zs, std, out_grad=None):
    n_layers = len(params) // 2
    d = expit(zs[-1])  # (B, 1)
    if out_grad is not None:
        d = d * out_grad[:, None]
    hbar = d @ params[2 * (n_layers - 1)].T
    for l in range(n_layers - 2, -1, -1):
        zbar = hbar * expit(zs[l])
        hbar = zbar @ params[2 * l].T
    return hbar / std


def udf_value_and_input_grad(net, accel, out_grad=None):
    """f and ∂f/∂x for a (B, D) batch; ``out_grad`` (B,) scales each row's gradient."""
    X = np.atleast_2d(_check_input(net, accel))
    f, hs, zs = _forward(net.params, (X - net.mean) / net.std)
    return f, _input_grad_from_cache(net.params, hs, zs, net.std, out_grad)


def udf_input_gradient(net, accel):
    X = _check_input(net, accel)
    _, g = udf_value_and_input_grad(net, np.atleast_2d(X))
    return g[0] if X.ndim == 1 else g


def loss_udf(net, sample):
    f = udf_forward(net, sample.accel)
    return (f - np.log1p(sample.d)) ** 2


def loss_eikonal(net, accel):
    g = udf_input_gradient(net, accel)
    return (np.linalg.norm(g) - 1.0) ** 2


def _udf_loss_grads(params, U, y, weight):
    """Mean squared error on log-distance targets and its parameter gradient."""
    B = U.shape[0]
    f, hs, zs = _forward(params, U)
    r = f - y
    loss = float(np.mean(r * r))
    grads = [np.zeros_like(p) for p in params]
    zbar = (weight * 2.0 / B) * r[:, None] * expit(zs[-1])
    n_layers = len(params) // 2
    for l in range(n_layers - 1, -1, -1):
        grads[2 * l] += hs[l].T @ zbar
        grads[2 * l + 1] += zbar.sum(axis=0)
        if l > 0:
            zbar = (zbar @ params[2 * l].T) * expit(zs[l - 1])
    return loss, grads


def _eikonal_loss_grads(params, X, mean, std, weight):
    """Mean of (||∇_x f|| - 1)^2 over a batch and its exact parameter gradient."""
    B = X.shape[0]
    n_layers = len(params) // 2
    f, hs, zs = _forward(params, (X - mean) / std)
    sig = [expit(z) for z in zs]
    g = _input_grad_from_cache(params, hs, zs, std)
    norm = np.linalg.norm(g, axis=1)
    loss = float(np.mean((norm - 1.0) ** 2))
    safe = np.where(norm > 0, norm, 1.0)
    v = np.where(norm[:, None] > 0, (weight * 2.0 / B) * ((norm - 1.0) / safe)[:, None] * g, 0.0)

    # tangent pass along v
    hdots = [v / std]
    zdots = []
    hd = hdots[0]
    for l in range(n_layers):
        zd = hd @ params[2 * l]
        zdots.append(zd)
        hd = sig[l] * zd
        if l < n_layers - 1:
            hdots.append(hd)

    grads = [np.zeros_like(p) for p in params]
    # d(sum fdot)/d params, fdot = s'(zL) * zdotL
    L = n_layers - 1
    zdbar = sig[L]
    zbar = sig[L] * (1.0 - sig[L]) * zdots[L]
    for l in range(L, -1, -1):
        grads[2 * l] += hdots[l].T @ zdbar + hs[l].T @ zbar
        grads[2 * l + 1] += zbar.sum(axis=0)
        if l == 0:
            break
        hdbar = zdbar @ params[2 * l].T
        hbar = zbar @ params[2 * l].T
        s = sig[l - 1]
        zdbar = hdbar * s
        zbar = hdbar * s * (1.0 - s) * zdots[l - 1] + hbar * s
    return loss, grads


def total_loss_and_grads(net_or_params, X_udf, y, X_eik, lambda_udf=1.0, lambda_eik=0.1,
                         mean=None, std=None):
    """``lambda_udf * L_udf + lambda_eik * L_eikonal`` and its parameter gradients.

    Returns (total, l_udf, l_eik, grads)."""
    if isinstance(net_or_params, JointUdf):
        params, mean, std = net_or_params.params, net_or_params.mean, net_or_params.std
    else:
        params = net_or_params
    grads = [np.zeros_like(p) for p in params]
    l_udf = l_eik = 0.0
    if X_udf is not None and len(X_udf):
        l_udf, gu = _udf_loss_grads(params, (np.asarray(X_udf) - mean) / std, np.asarray(y), lambda_udf)
        grads = [a + b for a, b in zip(grads, gu)]
    if lambda_eik > 0 and X_eik is not None and len(X_eik):
        l_eik, ge = _eikonal_loss_grads(params, np.asarray(X_eik, dtype=np.float64), mean, std, lambda_eik)
        grads = [a + b for a, b in zip(grads, ge)]
    return lambda_udf * l_udf + lambda_eik * l_eik, l_udf, l_eik, grads


# --------------------------------------------------------------------------
# training

@dataclass
class TrainConfig:
    lambda_udf: float = 1.0
    lambda_eik: float = 1e-4
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 100
    hidden: tuple = (256, 256, 256)
    # off-manifold samples generated per zero-level point by the data pipeline
    noise_ratio: float = 1.0
    # "negatives" or "negatives+perturbed" (adds jittered zero-level points)
    eikonal_samples: str = "negatives+perturbed"
    perturb_scale: float = 0.5
    val_fraction: float = 0.1
    # input scaling: "zero-level" divides by the zero-level std; "pooled"
    # divides by the std of all training inputs (both centre on the
    # zero-level mean)
    normalization: str = "pooled"
    # rescale a fresh net's layers on the training inputs before training
    calibrate_init: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.lambda_udf < 0 or self.lambda_eik < 0:
            raise ValidationError("loss weights must be non-negative")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValidationError("batch_size and epochs must be >= 1")
        if self.normalization not in ("zero-level", "pooled"):
            raise ValidationError(f"unknown normalization {self.normalization!r}")
        if self.eikonal_samples not in ("negatives", "negatives+perturbed"):
            raise ValidationError(f"unknown eikonal sample policy {self.eikonal_samples!r}")
        self.hidden = tuple(int(h) for h in self.hidden)


@dataclass
class TrainHistory:
    rows: list = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = np.inf

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "l_udf", "l_eikonal", "val_udf"])
            for r in self.rows:
                w.writerow([r[0]] + [repr(float(x)) for x in r[1:]])


def _as_arrays(negatives):
    if isinstance(negatives, tuple):
        X, d = negatives
        return np.asarray(X, dtype=np.float64), np.asarray(d, dtype=np.float64)
    X = np.array([s.accel for s in negatives], dtype=np.float64)
    d = np.array([s.d for s in negatives], dtype=np.float64)
    return X, d


def _split(n, frac, rng):
    perm = rng.permutation(n)
    n_val = int(round(frac * n)) if n > 1 else 0
    return perm[n_val:], perm[:n_val]


def train_joint_udf(zl, negatives, cfg=None, init=None, history=None):
    """Fit one joint's field to zero-level points (target 0) and labelled
    off-manifold samples (target ln(d+1)). ``negatives`` is a list of
    :class:`LabeledSample` or an ``(X, d)`` tuple. ``init`` warm-starts from
    an existing net (fine-tuning). Returns the best-validation net."""
    cfg = cfg or TrainConfig()
    Xn, dn = _as_arrays(negatives)
    if zl.size < 1 or Xn.shape[0] < 1:
        raise ValidationError("training needs at least one zero-level and one negative sample")
    if Xn.shape[1] != zl.dim:
        raise DimensionError("negative samples do not match the zero-level dimension")
    rng = np.random.default_rng(cfg.seed)
    fresh = init is None
    net = init.copy() if not fresh else init_joint_udf(
        zl.joint_index, zl.T, cfg.hidden, zl.mean, zl.std, seed=int(rng.integers(2**63 - 1)))

    zi_tr, zi_va = _split(zl.size, cfg.val_fraction, rng)
    ni_tr, ni_va = _split(Xn.shape[0], cfg.val_fraction, rng)
    X = np.concatenate([zl.points[zi_tr], Xn[ni_tr]])
    y = np.concatenate([np.zeros(zi_tr.size), np.log1p(dn[ni_tr])])
    is_neg = np.concatenate([np.zeros(zi_tr.size, bool), np.ones(ni_tr.size, bool)])
    Xv = np.concatenate([zl.points[zi_va], Xn[ni_va]])
    yv = np.concatenate([np.zeros(zi_va.size), np.log1p(dn[ni_va])])
    if Xv.shape[0] == 0:
        Xv, yv = X, y
    if fresh and cfg.normalization == "pooled":
        net.std = normalization_stats(X)[1]
    if fresh and cfg.calibrate_init:
        calibrate_init(net, X, y)

    opt = Adam(net.params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    history = history if history is not None else TrainHistory()
    best = [p.copy() for p in net.params]
    perturb_sd = cfg.perturb_scale * net.std
    n = X.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        sums = np.zeros(3)
        batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = X[idx], y[idx]
            X_eik = xb[is_neg[idx]]
            if cfg.eikonal_samples == "negatives+perturbed":
                zb = xb[~is_neg[idx]][:max(len(X_eik), 1)]
                X_eik = np.concatenate([X_eik, zb + rng.normal(size=zb.shape) * perturb_sd])
            total, lu, le, grads = total_loss_and_grads(
                net.params, xb, yb, X_eik, cfg.lambda_udf, cfg.lambda_eik, net.mean, net.std)
            if not np.isfinite(total) or not all(np.all(np.isfinite(g)) for g in grads):
                raise NumericalError(
                    f"joint {net.joint_index}: loss diverged at epoch {epoch}, batch {batches} "
                    f"(total={total}, udf={lu}, eikonal={le}, lr={cfg.lr})")
            opt.step(grads)
            sums += (total, lu, le)
            batches += 1
        val = float(np.mean((udf_forward(net, Xv) - yv) ** 2))
        means = sums / max(batches, 1)
        history.rows.append((epoch, *means, val))
        if val < history.best_val:
            history.best_val, history.best_epoch = val, epoch
            best = [p.copy() for p in net.params]
        log.debug("joint %d epoch %d loss %.5f val %.5f", net.joint_index, epoch, means[0], val)
    net.params = best
    return net


# --------------------------------------------------------------------------
# the composed model and its checkpoint

@dataclass
class ManifoldModel:
    nets: dict
    weights: JointWeights
    T: int
    fps: int
    train_config: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = set(self.weights.included)
        got = set(self.nets)
        if got != expected:
            missing = sorted(expected - got)
            extra = sorted(got - expected)
            raise CheckpointError(f"model joints mismatch: missing {missing}, unexpected {extra}")
        for j, net in self.nets.items():
            if net.T != self.T:
                raise CheckpointError(f"joint {j} was trained with T={net.T}, model says T={self.T}")

    @property
    def joints(self):
        return sorted(self.nets)

    def check_compatible(self, T=None, fps=None):
        from .errors import SegmentLengthError

        if T is not None and T != self.T:
            raise SegmentLengthError(f"model segment length is {self.T}, got {T}")
        if fps is not None and int(fps) != self.fps:
            raise ValidationError(f"model was trained at {self.fps} fps, sequence is {fps} fps")


def save_model(model, path):
    arrays = []
    joints = []
    for j in model.joints:
        net = model.nets[j]
        joints.append({"joint": j, "dims": net.dims})
        for i, p in enumerate(net.params):
            arrays.append((f"j{j}_p{i}", np.asarray(p, dtype="<f8")))
        arrays.append((f"j{j}_mean", np.asarray(net.mean, dtype="<f8")))
        arrays.append((f"j{j}_std", np.asarray(net.std, dtype="<f8")))
    arrays.append(("path_sums", np.asarray(model.weights.path_sums, dtype="<f8")))
    arrays.append(("joint_weights", np.asarray(model.weights.weights, dtype="<f8")))
    header = {
        "T": model.T, "fps": model.fps, "activation": "softplus", "output": "softplus",
        "joints": joints, "excluded": sorted(model.weights.excluded),
        "train_config": model.train_config,
    }
    container.dump(path, CKPT_MAGIC, CKPT_VERSION, header, arrays)


def load_model(path, expected_T=None, expected_fps=None):
    header, arrays = container.load(path, CKPT_MAGIC, CKPT_VERSION)
    T = int(header["T"])
    nets = {}
    for entry in header["joints"]:
        j = entry["joint"]
        dims = entry["dims"]
        params = []
        for i in range(2 * (len(dims) - 1)):
            key = f"j{j}_p{i}"
            if key not in arrays:
                raise CheckpointError(f"{path}: missing array {key}")
            params.append(arrays[key])
        shapes_ok = all(params[2 * l].shape == (dims[l], dims[l + 1]) and params[2 * l + 1].shape == (dims[l + 1],)
                        for l in range(len(dims) - 1))
        if not shapes_ok:
            raise CheckpointError(f"{path}: joint {j} weight shapes do not match dims {dims}")
        nets[j] = JointUdf(j, T, params, arrays[f"j{j}_mean"], arrays[f"j{j}_std"],
                           header["activation"], header["output"])
    weights = JointWeights(path_sums=arrays["path_sums"], weights=arrays["joint_weights"],
                           excluded=frozenset(header["excluded"]))
    model = ManifoldModel(nets=nets, weights=weights, T=T, fps=int(header["fps"]),
                          train_config=header.get("train_config", {}))
    model.check_compatible(expected_T, expected_fps)
    return model


def config_dict(cfg):
    d = asdict(cfg)
    d["hidden"] = list(d["hidden"])
    return d


__all__ = [
    "JointUdf", "TrainConfig", "TrainHistory", "ManifoldModel", "LabeledSample",
    "init_joint_udf", "udf_forward", "udf_input_gradient", "udf_value_and_input_grad",
    "loss_udf", "loss_eikonal", "total_loss_and_grads", "train_joint_udf",
    "save_model", "load_model",
]
