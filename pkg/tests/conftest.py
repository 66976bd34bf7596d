import numpy as np
import pytest

from motionudf import kinematics as kin
from motionudf.manifold import accel_dim
from motionudf.motion import synthetic_suite
from motionudf.pipeline import desk_config, train_model
from motionudf.udf import ManifoldModel, init_joint_udf, save_model


def random_model(T=8, hidden=(6, 5), seed=0, fps=30):
    """Untrained but fully formed model; cheap enough for gradient checks."""
    weights = kin.joint_weights(kin.bone_path_sums(kin.default_skeleton()))
    rng = np.random.default_rng(seed)
    nets = {}
    for j in weights.included:
        D = accel_dim(T)
        nets[j] = init_joint_udf(j, T, hidden, mean=rng.normal(0, 1e-3, D), std=rng.uniform(0.5e-2, 2e-2, D),
                                 seed=seed + j)
    return ManifoldModel(nets=nets, weights=weights, T=T, fps=fps)


def central_diff(f, x, h=1e-6):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def max_rel_err(a, b, floor=1e-6):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), floor))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_model():
    return random_model()


@pytest.fixture(scope="session")
def train_suite():
    return synthetic_suite(12, 96, seed=1)


@pytest.fixture(scope="session")
def desk_model(train_suite):
    """The desk-scale model every downstream acceptance check runs on."""
    return train_model(train_suite, desk_config())


@pytest.fixture(scope="session")
def desk_model_path(desk_model, tmp_path_factory):
    path = tmp_path_factory.mktemp("model") / "desk.ckpt"
    save_model(desk_model, path)
    return str(path)


# acceptance criteria outcomes, printed once at the end of the session
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
