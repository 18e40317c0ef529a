import numpy as np
import pytest

from cbflearn.features import (
    CbfModel,
    FeatureError,
    MlpModel,
    RffMap,
    lipschitz_sample_estimate,
    load_model,
    mlp_init,
    mlp_input_gradient,
    mlp_lipschitz_naive,
    mlp_value,
    rff_features,
    rff_grad,
    rff_hessian,
    rff_hessian_apply,
    rff_hessian_bound,
    rff_init,
    rff_jacobian,
    rff_lipschitz_bound,
    rff_probabilistic_bound,
    rff_value,
    save_model,
)


def _forced_map(W, b):
    W = np.atleast_2d(np.asarray(W, dtype=float))
    return RffMap(
        num_features=W.shape[0], input_dim=W.shape[1], bandwidth=1.0, seed=0,
        W=W, b=np.asarray(b, dtype=float),
    )


# ---------------------------------------------------------------------------
# random Fourier features
# ---------------------------------------------------------------------------


def test_rff_init_shapes_paper_config():
    m = rff_init(200, 2, 1.2, seed=0)
    assert m.W.shape == (200, 2)
    assert m.b.shape == (200,)
    assert np.all((m.b >= 0) & (m.b < 2 * np.pi))


def test_rff_init_reproducible():
    a = rff_init(50, 3, 0.7, seed=42)
    b = rff_init(50, 3, 0.7, seed=42)
    assert np.array_equal(a.W, b.W) and np.array_equal(a.b, b.b)


def test_rff_frequency_mean_near_zero():
    m = rff_init(400, 3, 1.5, seed=1)
    # sample mean of N(0, 1.5^2) entries: std error 1.5/sqrt(l*n)
    assert abs(m.W.mean()) < 5 * 1.5 / np.sqrt(400 * 3)


def test_rff_zero_theta_is_zero_function():
    m = rff_init(64, 2, 1.0, seed=0)
    theta = np.zeros(64)
    X = np.random.default_rng(0).normal(size=(10, 2))
    assert np.allclose(rff_value(m, theta, X), 0.0)


def test_rff_forced_phase_at_origin():
    m = _forced_map(np.ones((4, 2)), np.zeros(4))
    phi = rff_features(m, np.zeros(2))
    assert np.allclose(phi, np.sqrt(2.0 / 4.0))


def test_rff_kernel_approximation():
    m = rff_init(2000, 2, 1.2, seed=5)
    rng = np.random.default_rng(2)
    for _ in range(10):
        x, y = rng.normal(size=2), rng.normal(size=2)
        approx = rff_features(m, x) @ rff_features(m, y)
        exact = np.exp(-1.2**2 * np.sum((x - y) ** 2) / 2.0)
        assert abs(approx - exact) < 0.1


def test_rff_jacobian_row_formula():
    m = _forced_map([[1.0]], [0.0])
    row = rff_jacobian(m, np.array([np.pi / 2]))
    assert row[0, 0] == pytest.approx(-np.sqrt(2.0))


def test_rff_jacobian_matches_finite_differences():
    m = rff_init(80, 3, 1.1, seed=3)
    rng = np.random.default_rng(4)
    x = rng.normal(size=3)
    jac = rff_jacobian(m, x)
    step = 1e-5
    for j in range(3):
        e = np.zeros(3)
        e[j] = step
        fd = (rff_features(m, x + e) - rff_features(m, x - e)) / (2 * step)
        assert np.max(np.abs(jac[:, j] - fd)) < 1e-7 * max(1.0, np.max(np.abs(jac)))


def test_rff_grad_zero_theta():
    m = rff_init(32, 2, 1.0, seed=0)
    assert np.allclose(rff_grad(m, np.zeros(32), np.array([0.3, 0.4])), 0.0)


def test_rff_boundedness():
    m = rff_init(128, 2, 1.3, seed=9)
    rng = np.random.default_rng(9)
    theta = rng.normal(size=128)
    X = rng.normal(size=(500, 2), scale=3)
    vals = rff_value(m, theta, X)
    assert np.max(np.abs(vals)) <= np.sqrt(2) * np.linalg.norm(theta) + 1e-12


def test_rff_lipschitz_bound_diagonal_case():
    m = _forced_map(np.diag([3.0, 4.0]), np.zeros(2))
    theta = np.array([1.0, 0.0])
    assert rff_lipschitz_bound(m, theta) == pytest.approx(4.0)


def test_rff_hessian_bound_single_feature():
    m = _forced_map([[2.0, 0.0]], [0.0])
    assert rff_hessian_bound(m, np.array([1.0])) == pytest.approx(np.sqrt(2) * 4.0)


def test_rff_bounds_zero_theta():
    m = rff_init(16, 2, 1.0, seed=0)
    assert rff_lipschitz_bound(m, np.zeros(16)) == 0.0
    assert rff_hessian_bound(m, np.zeros(16)) == 0.0


def test_rff_empirical_quotients_below_bounds():
    m = rff_init(100, 2, 1.2, seed=11)
    rng = np.random.default_rng(11)
    theta = rng.normal(size=100)
    lf = rff_lipschitz_bound(m, theta)
    lg = rff_hessian_bound(m, theta)
    A = rng.uniform(-1, 1, size=(10_000, 2))
    B = rng.uniform(-1, 1, size=(10_000, 2))
    d = np.linalg.norm(A - B, axis=1)
    ok = d > 1e-9
    qf = np.abs(rff_value(m, theta, A[ok]) - rff_value(m, theta, B[ok])) / d[ok]
    qg = (
        np.linalg.norm(rff_grad(m, theta, A[ok]) - rff_grad(m, theta, B[ok]), axis=1)
        / d[ok]
    )
    assert np.max(qf) <= lf + 1e-12
    assert np.max(qg) <= lg + 1e-12


def test_rff_pointwise_gradient_below_global_bound():
    m = rff_init(150, 2, 1.2, seed=13)
    rng = np.random.default_rng(13)
    theta = rng.normal(size=150)
    X = rng.uniform(-2, 2, size=(10_000, 2))
    norms = np.linalg.norm(rff_grad(m, theta, X), axis=1)
    assert np.max(norms) <= rff_lipschitz_bound(m, theta) + 1e-12


def test_rff_hessian_apply_consistent():
    m = rff_init(60, 3, 1.0, seed=17)
    rng = np.random.default_rng(17)
    theta = rng.normal(size=60)
    x = rng.normal(size=3)
    v = rng.normal(size=3)
    assert np.allclose(
        rff_hessian_apply(m, theta, x[None, :], v[None, :])[0],
        rff_hessian(m, theta, x) @ v,
    )


def test_rff_probabilistic_bound_limits():
    m = rff_init(100, 2, 1.5, seed=0)
    theta = np.ones(100)
    near_one = rff_probabilistic_bound(m, theta, delta=1 - 1e-12)
    expected = np.sqrt(2 * 1.5**2) * (1 + np.sqrt(2 / 100)) * np.linalg.norm(theta)
    assert near_one == pytest.approx(expected, rel=1e-5)
    with pytest.raises(FeatureError):
        rff_probabilistic_bound(m, theta, delta=0.0)


def test_rff_probabilistic_bound_dominates_svd_bound():
    # distribution-level bound at delta=0.05 must cover the realized spectral
    # bound in at least 95% of map draws
    theta = np.ones(200)
    hits = 0
    for seed in range(100):
        m = rff_init(200, 2, 1.2, seed=seed)
        prob = rff_probabilistic_bound(m, theta, delta=0.05)
        svd = rff_lipschitz_bound(m, theta)
        hits += prob >= svd
    assert hits >= 95


# ---------------------------------------------------------------------------
# tanh network
# ---------------------------------------------------------------------------


def test_mlp_zero_weights_constant():
    model = mlp_init([3, 8, 1], seed=0)
    for w in model.weights:
        w[:] = 0.0
    model.biases[-1][:] = 0.7
    x = np.random.default_rng(0).normal(size=3)
    assert mlp_value(model, x) == pytest.approx(0.7)
    assert np.allclose(mlp_input_gradient(model, x), 0.0)


def test_mlp_single_linear_layer_gradient():
    w = np.array([[3.0, 4.0]])
    model = MlpModel(weights=[w], biases=[np.array([0.5])])
    x = np.array([1.0, -2.0])
    assert mlp_value(model, x) == pytest.approx(3.0 - 8.0 + 0.5)
    assert np.allclose(mlp_input_gradient(model, x), w[0])
    assert mlp_lipschitz_naive(model) == pytest.approx(5.0)


def test_mlp_gradient_matches_finite_differences():
    rng = np.random.default_rng(23)
    for trial in range(10):
        model = mlp_init([2, 8, 8, 1], seed=trial)
        x = rng.normal(size=2)
        g = mlp_input_gradient(model, x)
        step = 1e-6
        for j in range(2):
            e = np.zeros(2)
            e[j] = step
            fd = (mlp_value(model, x + e) - mlp_value(model, x - e)) / (2 * step)
            assert abs(g[j] - fd) <= 1e-6 * max(1.0, abs(fd))


def test_mlp_naive_bound_is_product_of_norms():
    rng = np.random.default_rng(3)
    w1 = rng.normal(size=(8, 4))
    w2 = rng.normal(size=(1, 8))
    model = MlpModel(weights=[w1, w2], biases=[np.zeros(8), np.zeros(1)])
    expected = np.linalg.norm(w1, 2) * np.linalg.norm(w2, 2)
    assert mlp_lipschitz_naive(model) == pytest.approx(expected)


def test_mlp_naive_bound_dominates_sampled_quotients():
    model = mlp_init([3, 16, 16, 1], seed=5)
    bound = mlp_lipschitz_naive(model)
    rng = np.random.default_rng(5)
    A = rng.normal(size=(10_000, 3))
    B = rng.normal(size=(10_000, 3))
    d = np.linalg.norm(A - B, axis=1)
    q = np.abs(mlp_value(model, A) - mlp_value(model, B)) / np.maximum(d, 1e-12)
    assert np.max(q) <= bound + 1e-9


# ---------------------------------------------------------------------------
# sampled Lipschitz estimation
# ---------------------------------------------------------------------------


def test_sampled_estimate_constant_function():
    est = lipschitz_sample_estimate(
        lambda X: np.full(len(X), 3.0), np.zeros(2), 1.0, samples=200, seed=0
    )
    assert est == 0.0


def test_sampled_estimate_linear_function_converges_from_below():
    a = np.array([2.0, -1.0])
    est = lipschitz_sample_estimate(
        lambda X: X @ a, np.zeros(2), 1.0, samples=20_000, seed=1
    )
    assert est <= np.linalg.norm(a) + 1e-12
    assert est > 0.95 * np.linalg.norm(a)


def test_sampled_estimate_below_rff_bound():
    m = rff_init(90, 2, 1.2, seed=2)
    theta = np.random.default_rng(2).normal(size=90)
    est = lipschitz_sample_estimate(
        lambda X: rff_value(m, theta, X), np.zeros(2), 0.5, samples=3000, seed=3
    )
    assert est <= rff_lipschitz_bound(m, theta)


def test_sampled_estimate_rejects_few_samples():
    with pytest.raises(FeatureError):
        lipschitz_sample_estimate(lambda X: X[:, 0], np.zeros(2), 1.0, samples=1)


# ---------------------------------------------------------------------------
# model file round trip
# ---------------------------------------------------------------------------


def test_rff_model_round_trip(tmp_path):
    m = rff_init(40, 2, 1.2, seed=21)
    theta = np.random.default_rng(21).normal(size=40)
    model = CbfModel(variant="rff", rff=m, theta=theta, alpha_coef=2.5)
    path = tmp_path / "model.json"
    save_model(path, model)
    loaded = load_model(path)
    assert loaded.variant == "rff"
    assert loaded.alpha_coef == 2.5
    assert np.array_equal(loaded.theta, theta)
    assert np.array_equal(loaded.rff.W, m.W)
    x = np.array([0.2, -0.7])
    assert loaded.value(x) == model.value(x)


def test_mlp_model_round_trip(tmp_path):
    mlp = mlp_init([4, 8, 8, 1], seed=2)
    model = CbfModel(variant="mlp", mlp=mlp, alpha_coef=1.0)
    path = tmp_path / "model.json"
    save_model(path, model)
    loaded = load_model(path)
    assert loaded.variant == "mlp"
    for a, b in zip(loaded.mlp.weights, mlp.weights):
        assert np.array_equal(a, b)
    x = np.random.default_rng(0).normal(size=4)
    assert loaded.value(x) == model.value(x)


def test_model_save_deterministic_bytes(tmp_path):
    m = rff_init(16, 2, 1.0, seed=1)
    theta = np.random.default_rng(1).normal(size=16)
    model = CbfModel(variant="rff", rff=m, theta=theta)
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_model(p1, model)
    save_model(p2, model)
    assert p1.read_bytes() == p2.read_bytes()
