import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from motionudf.errors import CheckpointError, DimensionError, FormatError, NumericalError, ValidationError
from motionudf.manifold import LabeledSample, accel_dim, label_distances, make_zero_level
from motionudf.udf import (JointUdf, ManifoldModel, TrainConfig, TrainHistory, init_joint_udf, load_model, loss_eikonal,
                           loss_udf, save_model, softplus, total_loss_and_grads, train_joint_udf, udf_forward,
                           udf_input_gradient, udf_value_and_input_grad)

from conftest import central_diff, max_rel_err, random_model


@pytest.fixture
def net(rng):
    D = accel_dim(6)
    return init_joint_udf(5, 6, (7, 5), mean=rng.normal(0, 0.1, D), std=rng.uniform(0.5, 2, D), seed=3)


def test_softplus_is_stable():
    z = np.linspace(-30, 30, 61)
    np.testing.assert_allclose(softplus(z), np.log1p(np.exp(z)), rtol=1e-12)
    out = softplus(np.array([-800.0, 800.0]))
    assert out[0] == 0.0 and out[1] == 800.0


def test_forward_by_hand(net, rng):
    x = rng.normal(size=net.input_dim)
    h = (x - net.mean) / net.std
    for i in range(0, len(net.params), 2):
        h = softplus(h @ net.params[i] + net.params[i + 1])
    assert np.isclose(udf_forward(net, x), h[0], rtol=1e-14)
    assert udf_forward(net, x) >= 0
    with pytest.raises(DimensionError):
        udf_forward(net, np.zeros(3))


def test_input_gradient_matches_finite_differences(net, rng):
    x = rng.normal(size=net.input_dim)
    num = central_diff(lambda v: udf_forward(net, v), x)
    assert max_rel_err(udf_input_gradient(net, x), num) < 1e-6
    X = rng.normal(size=(4, net.input_dim))
    w = rng.normal(size=4)
    f, g = udf_value_and_input_grad(net, X, out_grad=w)
    np.testing.assert_allclose(g, w[:, None] * udf_input_gradient(net, X), rtol=1e-12)


def test_zero_network_has_zero_gradient():
    net = init_joint_udf(4, 6, (3,))
    net.params = [np.zeros_like(p) for p in net.params]
    x = np.random.default_rng(0).normal(size=net.input_dim)
    np.testing.assert_array_equal(udf_input_gradient(net, x), 0.0)
    assert udf_input_gradient(net, x).shape == x.shape
    # zero gradient: the Eikonal penalty is exactly 1
    assert loss_eikonal(net, x) == 1.0


def test_udf_loss_by_hand():
    net = init_joint_udf(4, 6, (3,))
    net.params = [np.zeros_like(p) for p in net.params]
    net.params[-1][:] = np.log(np.e - 1)  # softplus of the output bias is 1
    x = np.zeros(net.input_dim)
    assert np.isclose(loss_udf(net, LabeledSample(accel=x, d=0.0)), 1.0, rtol=1e-14)
    assert np.isclose(loss_udf(net, LabeledSample(accel=x, d=np.e - 1)), 0.0, atol=1e-28)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, accel_dim(6), elements=st.floats(-1e6, 1e6)))
def test_output_is_never_negative(x):
    net = init_joint_udf(5, 6, (7, 5), seed=11)
    f = udf_forward(net, x)
    assert np.isfinite(f) and f >= 0


def test_normalization_is_applied_once(net, rng):
    x = rng.normal(size=net.input_dim)
    plain = JointUdf(net.joint_index, net.T, net.params, np.zeros(net.input_dim), np.ones(net.input_dim))
    assert udf_forward(net, x) == udf_forward(plain, (x - net.mean) / net.std)


def test_single_sample_losses(net, rng):
    x = rng.normal(size=net.input_dim)
    s = LabeledSample(accel=x, d=0.7)
    assert np.isclose(loss_udf(net, s), (udf_forward(net, x) - np.log1p(0.7)) ** 2)
    assert np.isclose(loss_eikonal(net, x), (np.linalg.norm(udf_input_gradient(net, x)) - 1) ** 2)


@pytest.mark.parametrize("lam_udf,lam_eik", [(1.0, 0.0), (0.0, 1.0), (0.7, 0.3)])
def test_parameter_gradients_match_finite_differences(net, rng, lam_udf, lam_eik):
    X = rng.normal(size=(6, net.input_dim))
    y = rng.uniform(0, 1, 6)
    Xe = rng.normal(size=(5, net.input_dim))
    _, _, _, grads = total_loss_and_grads(net, X, y, Xe, lam_udf, lam_eik)
    for i, p in enumerate(net.params):
        def f(v, i=i):
            params = [q if j != i else v for j, q in enumerate(net.params)]
            return total_loss_and_grads(params, X, y, Xe, lam_udf, lam_eik, net.mean, net.std)[0]
        assert max_rel_err(grads[i], central_diff(f, p)) < 1e-4, f"param {i}"


def test_loss_parts_recombine(net, rng):
    X = rng.normal(size=(6, net.input_dim))
    y = rng.uniform(0, 1, 6)
    total, lu, le, _ = total_loss_and_grads(net, X, y, X, 0.3, 2.0)
    assert np.isclose(total, 0.3 * lu + 2.0 * le)
    assert np.isclose(lu, np.mean((udf_forward(net, X) - y) ** 2))
    assert np.isclose(le, np.mean([loss_eikonal(net, x) for x in X]))


def _toy_problem(rng, T=6, n=200):
    D = accel_dim(T)
    zl = make_zero_level(rng.normal(0, 0.01, (n, D)) * (np.arange(D) < 3), 5, T)
    Xn = rng.normal(0, 0.05, (n, D))
    d = np.abs(Xn).sum(axis=1)
    return zl, (Xn, d)


def test_training_reduces_loss_and_is_deterministic(rng):
    zl, neg = _toy_problem(rng)
    cfg = TrainConfig(hidden=(16, 16), epochs=15, lr=3e-3, seed=2)
    h1, h2 = TrainHistory(), TrainHistory()
    a = train_joint_udf(zl, neg, cfg, history=h1)
    b = train_joint_udf(zl, neg, cfg, history=h2)
    assert h1.rows[-1][1] < h1.rows[0][1]
    assert h1.rows == h2.rows
    for p, q in zip(a.params, b.params):
        assert p.tobytes() == q.tobytes()
    assert h1.best_epoch == int(np.argmin([r[4] for r in h1.rows]))


def test_eikonal_term_pulls_gradient_norms_to_one(rng):
    zl, neg = _toy_problem(rng)
    probes = rng.normal(0, 0.05, (200, zl.dim))
    dev = []
    for lam in (0.0, 0.1):
        net = train_joint_udf(zl, neg, TrainConfig(hidden=(16, 16), epochs=15, lr=3e-3, lambda_eik=lam, seed=2))
        g = np.linalg.norm(udf_input_gradient(net, probes), axis=-1)
        dev.append(np.mean(np.abs(g - 1)))
    assert dev[1] < dev[0]


def test_training_loss_mostly_decreases():
    # accelerations on a line through the origin of the 42-dim space
    rng = np.random.default_rng(0)
    D = accel_dim(16)
    u = rng.normal(size=D)
    u /= np.linalg.norm(u)
    zl = make_zero_level(np.outer(rng.uniform(-0.2, 0.2, 500), u), 4, 16)
    r = np.exp(rng.uniform(np.log(0.002), np.log(0.15), 500))
    X = np.outer(rng.uniform(-0.2, 0.2, 500), u) + rng.normal(size=(500, D)) * r[:, None]
    h = TrainHistory()
    train_joint_udf(zl, (X, label_distances(X, zl)), TrainConfig(hidden=(32, 32), epochs=40, lr=1e-3, seed=0),
                    history=h)
    losses = [row[1] for row in h.rows]
    down = np.mean(np.diff(losses) <= 0)
    assert down >= 0.9, down


def test_training_history_csv(rng, tmp_path):
    zl, neg = _toy_problem(rng)
    h = TrainHistory()
    train_joint_udf(zl, neg, TrainConfig(hidden=(4,), epochs=3), history=h)
    h.write_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss,l_udf,l_eikonal,val_udf" and len(lines) == 4


def test_divergence_is_reported(rng):
    zl, (Xn, d) = _toy_problem(rng)
    Xn[0, 0] = np.inf
    with np.errstate(invalid="ignore"), pytest.raises(NumericalError, match="joint 5"):
        train_joint_udf(zl, (Xn, d), TrainConfig(hidden=(4,), epochs=1))


@pytest.mark.parametrize("bad", [dict(lambda_eik=-1), dict(batch_size=0), dict(normalization="minmax"),
                                 dict(eikonal_samples="all")])
def test_config_validation(bad):
    with pytest.raises(ValidationError):
        TrainConfig(**bad)


def test_checkpoint_round_trip(tmp_path):
    m = random_model()
    save_model(m, tmp_path / "m.ckpt")
    back = load_model(tmp_path / "m.ckpt")
    assert back.T == m.T and back.joints == m.joints
    x = np.random.default_rng(0).normal(size=(3, accel_dim(m.T)))
    for j in m.joints:
        np.testing.assert_array_equal(udf_forward(back.nets[j], x), udf_forward(m.nets[j], x))
    with pytest.raises(ValidationError):
        load_model(tmp_path / "m.ckpt", expected_T=16)
    with pytest.raises(ValidationError):
        load_model(tmp_path / "m.ckpt", expected_fps=60)


def test_checkpoint_errors(tmp_path):
    m = random_model()
    with pytest.raises(CheckpointError, match="missing"):
        ManifoldModel(nets={j: n for j, n in m.nets.items() if j != 9}, weights=m.weights, T=m.T, fps=30)
    save_model(m, tmp_path / "m.ckpt")
    raw = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "bad.ckpt").write_bytes(raw[:8] + (2).to_bytes(4, "little") + raw[12:])
    with pytest.raises(FormatError, match="version"):
        load_model(tmp_path / "bad.ckpt")
