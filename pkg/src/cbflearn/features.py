"""Hypothesis spaces for barrier candidates: random Fourier features and tanh MLPs.

Both variants are smooth, expose exact input gradients, and come with
Lipschitz machinery: the RFF map has analytic gradient/Hessian bounds through
the spectral norm of its frequency matrix, the MLP a weight-norm product
bound, and both a post-hoc sampling estimator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "RffMap",
    "MlpModel",
    "CbfModel",
    "FeatureError",
    "rff_init",
    "rff_features",
    "rff_value",
    "rff_jacobian",
    "rff_grad",
    "rff_hessian",
    "rff_lipschitz_bound",
    "rff_hessian_bound",
    "rff_probabilistic_bound",
    "mlp_init",
    "mlp_value",
    "mlp_input_gradient",
    "mlp_lipschitz_naive",
    "mlp_param_gradient",
    "mlp_mixed_param_gradient",
    "flatten_params",
    "unflatten_params",
    "lipschitz_sample_estimate",
    "save_model",
    "load_model",
]


class FeatureError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Random Fourier features for the Gaussian kernel
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RffMap:
    """phi(x) = sqrt(2/l) cos(W x + b) with rows of W ~ N(0, bandwidth^2 I).

    Reproducible from (num_features, input_dim, bandwidth, seed); W and b are
    regenerated on load rather than stored.
    """

    num_features: int
    input_dim: int
    bandwidth: float
    seed: int
    W: np.ndarray = field(repr=False, default=None)
    b: np.ndarray = field(repr=False, default=None)

    @property
    def scale(self) -> float:
        return np.sqrt(2.0 / self.num_features)


def rff_init(num_features: int, input_dim: int, bandwidth: float, seed: int) -> RffMap:
    if num_features < 1 or input_dim < 1:
        raise FeatureError("num_features and input_dim must be >= 1")
    if bandwidth <= 0:
        raise FeatureError("bandwidth must be positive")
    rng = np.random.default_rng(seed)
    W = rng.normal(0.0, bandwidth, size=(num_features, input_dim))
    b = rng.uniform(0.0, 2.0 * np.pi, size=num_features)
    return RffMap(num_features, input_dim, float(bandwidth), int(seed), W, b)


def rff_features(m: RffMap, X: np.ndarray) -> np.ndarray:
    """Feature matrix phi(X); accepts a single point or a batch."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    phi = m.scale * np.cos(np.atleast_2d(X) @ m.W.T + m.b)
    return phi[0] if single else phi


def rff_value(m: RffMap, theta: np.ndarray, X: np.ndarray):
    """h(x) = <phi(x), theta>."""
    v = rff_features(m, X) @ theta
    return float(v) if np.ndim(v) == 0 else v


def rff_jacobian(m: RffMap, x: np.ndarray) -> np.ndarray:
    """Jacobian of phi at x; row i is -sqrt(2/l) sin(<x, w_i> + b_i) w_i."""
    x = np.asarray(x, dtype=float)
    s = np.sin(m.W @ x + m.b)
    return -m.scale * s[:, None] * m.W


def rff_grad(m: RffMap, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Input gradient of h; batched: (N, n) for X of shape (N, n)."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    S = np.sin(np.atleast_2d(X) @ m.W.T + m.b)  # (N, l)
    G = -m.scale * (S * theta) @ m.W
    return G[0] if single else G


def rff_hessian(m: RffMap, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Hessian of h at a single point: -sqrt(2/l) sum_i theta_i cos(.) w_i w_i^T."""
    x = np.asarray(x, dtype=float)
    c = np.cos(m.W @ x + m.b)
    return -m.scale * (m.W.T * (theta * c)) @ m.W


def rff_hessian_apply(m: RffMap, theta: np.ndarray, X: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Batched Hessian-vector products: row k is hess h(X[k]) @ V[k]."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))
    C = np.cos(X @ m.W.T + m.b)  # (N, l)
    WV = V @ m.W.T  # (N, l)
    return -m.scale * (theta * C * WV) @ m.W


def rff_lipschitz_bound(m: RffMap, theta: np.ndarray) -> float:
    """Global bound on ||grad h||: sqrt(2/l) ||W||_2 ||theta||_2."""
    return float(m.scale * np.linalg.norm(m.W, 2) * np.linalg.norm(theta))


def rff_hessian_bound(m: RffMap, theta: np.ndarray) -> float:
    """Global bound on ||hess h||: sqrt(2/l) ||theta||_inf ||W||_2^2."""
    return float(m.scale * np.max(np.abs(theta)) * np.linalg.norm(m.W, 2) ** 2)


def rff_probabilistic_bound(m: RffMap, theta: np.ndarray, delta: float) -> float:
    """Distribution-level Lipschitz bound holding w.p. >= 1 - delta over the map draw.

    Reporting only; the spectral-norm bound is authoritative for a given map.
    """
    if not 0 < delta < 1:
        raise FeatureError("delta must lie in (0, 1)")
    l, n = m.num_features, m.input_dim
    factor = 1.0 + np.sqrt(n / l) + np.sqrt((2.0 / l) * np.log(1.0 / delta))
    return float(np.sqrt(2.0 * m.bandwidth**2) * factor * np.linalg.norm(theta))


# ---------------------------------------------------------------------------
# Fully-connected tanh network with a scalar linear output
# ---------------------------------------------------------------------------


@dataclass
class MlpModel:
    """weights[k]: (out, in), biases[k]: (out,); tanh between layers, linear output."""

    weights: list
    biases: list

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        if self.weights[-1].shape[0] != 1:
            raise FeatureError("output layer must be scalar")

    @property
    def widths(self) -> list:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]


def mlp_init(widths: list, seed: int) -> MlpModel:
    """Glorot-uniform initialization: U(+-sqrt(6 / (fan_in + fan_out)))."""
    if len(widths) < 2 or widths[-1] != 1:
        raise FeatureError("widths must end in a scalar output layer")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpModel(weights=weights, biases=biases)


def _mlp_forward(model: MlpModel, X: np.ndarray):
    """Returns (values (N,), activations list starting with X)."""
    acts = [X]
    a = X
    for W, b in zip(model.weights[:-1], model.biases[:-1]):
        a = np.tanh(a @ W.T + b)
        acts.append(a)
    out = a @ model.weights[-1].T + model.biases[-1]
    return out[:, 0], acts


def mlp_value(model: MlpModel, X: np.ndarray):
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    v, _ = _mlp_forward(model, np.atleast_2d(X))
    return float(v[0]) if single else v


def mlp_input_gradient(model: MlpModel, X: np.ndarray) -> np.ndarray:
    """Exact input gradient by reverse accumulation through the tanh layers."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    _, acts = _mlp_forward(model, np.atleast_2d(X))
    g = np.repeat(model.weights[-1], len(acts[0]), axis=0)  # (N, last_width)
    for W, a in zip(reversed(model.weights[:-1]), reversed(acts[1:])):
        g = ((1.0 - a * a) * g) @ W
    return g[0] if single else g


def mlp_lipschitz_naive(model: MlpModel) -> float:
    """Product of the layer spectral norms (tanh is 1-Lipschitz)."""
    out = 1.0
    for W in model.weights:
        out *= np.linalg.norm(W, 2)
    return float(out)


def flatten_params(model: MlpModel) -> np.ndarray:
    return np.concatenate([w.ravel() for w in model.weights] + [b.ravel() for b in model.biases])


def unflatten_params(model: MlpModel, vec: np.ndarray) -> MlpModel:
    weights, biases = [], []
    k = 0
    for w in model.weights:
        weights.append(vec[k : k + w.size].reshape(w.shape))
        k += w.size
    for b in model.biases:
        biases.append(vec[k : k + b.size].reshape(b.shape))
        k += b.size
    return MlpModel(weights=weights, biases=biases)


def mlp_param_gradient(model: MlpModel, X: np.ndarray, weights_out: Optional[np.ndarray] = None):
    """Gradient of sum_k c_k h(x_k) with respect to every weight and bias.

    `weights_out` holds the coefficients c_k (default all ones). Returns
    (grad_weights, grad_biases) shaped like the model parameters.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    c = np.ones(len(X)) if weights_out is None else np.asarray(weights_out, dtype=float)
    _, acts = _mlp_forward(model, X)
    gW = [np.zeros_like(w) for w in model.weights]
    gb = [np.zeros_like(b) for b in model.biases]
    # output layer
    gW[-1] += (c[:, None] * acts[-1]).sum(axis=0)[None, :]
    gb[-1] += np.array([c.sum()])
    delta = c[:, None] * np.repeat(model.weights[-1], len(X), axis=0)  # (N, width)
    for k in range(len(model.weights) - 2, -1, -1):
        a = acts[k + 1]
        dz = delta * (1.0 - a * a)
        gW[k] += dz.T @ acts[k]
        gb[k] += dz.sum(axis=0)
        if k > 0:
            delta = dz @ model.weights[k]
    return gW, gb


def mlp_mixed_param_gradient(
    model: MlpModel,
    X: np.ndarray,
    V: np.ndarray,
    weights_out: Optional[np.ndarray] = None,
):
    """Gradient of sum_k c_k <grad_x h(x_k), v_k> with respect to the parameters.

    Forward-over-reverse accumulation: a tangent pass propagates the
    directional derivatives along v_k, and the reverse pass differentiates the
    resulting scalar with respect to every weight and bias.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))
    c = np.ones(len(X)) if weights_out is None else np.asarray(weights_out, dtype=float)
    n_layers = len(model.weights)

    # forward with tangents
    acts = [X]
    tans = [V]
    a, t = X, V
    for W, b in zip(model.weights[:-1], model.biases[:-1]):
        z_t = t @ W.T
        a = np.tanh(a @ W.T + b)
        t = (1.0 - a * a) * z_t
        acts.append(a)
        tans.append(t)
    # directional derivative d = W_out @ t  (not needed here, only its adjoint)

    gW = [np.zeros_like(w) for w in model.weights]
    gb = [np.zeros_like(b) for b in model.biases]

    # reverse pass: adjoints of activations (bar_a) and tangents (bar_t)
    gW[-1] += (c[:, None] * tans[-1]).sum(axis=0)[None, :]
    bar_t = c[:, None] * np.repeat(model.weights[-1], len(X), axis=0)
    bar_a = np.zeros_like(bar_t)
    for k in range(n_layers - 2, -1, -1):
        a = acts[k + 1]
        t = tans[k + 1]
        W = model.weights[k]
        # t = (1 - a^2) * (tans[k] @ W.T)
        z_t = tans[k] @ W.T
        bar_zt = (1.0 - a * a) * bar_t
        bar_a += -2.0 * a * z_t * bar_t
        # a = tanh(acts[k] @ W.T + b)
        bar_z = (1.0 - a * a) * bar_a
        gW[k] += bar_zt.T @ tans[k] + bar_z.T @ acts[k]
        gb[k] += bar_z.sum(axis=0)
        if k > 0:
            bar_t = bar_zt @ W
            bar_a = bar_z @ W
    return gW, gb


# ---------------------------------------------------------------------------
# Unified barrier-candidate wrapper
# ---------------------------------------------------------------------------


@dataclass
class CbfModel:
    """A barrier candidate h: either theta over a fixed RFF map or a tanh MLP."""

    variant: str  # "rff" | "mlp"
    rff: Optional[RffMap] = None
    theta: Optional[np.ndarray] = None
    mlp: Optional[MlpModel] = None
    alpha_coef: float = 1.0
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant == "rff":
            if self.rff is None or self.theta is None:
                raise FeatureError("rff variant needs a map and theta")
            self.theta = np.asarray(self.theta, dtype=float)
        elif self.variant == "mlp":
            if self.mlp is None:
                raise FeatureError("mlp variant needs an MlpModel")
        else:
            raise FeatureError(f"unknown variant '{self.variant}'")

    @property
    def input_dim(self) -> int:
        return self.rff.input_dim if self.variant == "rff" else self.mlp.input_dim

    def value(self, X: np.ndarray):
        if self.variant == "rff":
            return rff_value(self.rff, self.theta, X)
        return mlp_value(self.mlp, X)

    def grad(self, X: np.ndarray) -> np.ndarray:
        if self.variant == "rff":
            return rff_grad(self.rff, self.theta, X)
        return mlp_input_gradient(self.mlp, X)

    def gradient_lipschitz_bound(self, hint_radius: float = 1.0, seed: int = 0) -> float:
        """Bound on the Lipschitz constant of grad h (global for RFF, sampled for MLP)."""
        if self.variant == "rff":
            return rff_hessian_bound(self.rff, self.theta)
        return lipschitz_sample_estimate(
            lambda X: mlp_input_gradient(self.mlp, X),
            center=np.zeros(self.input_dim),
            radius=hint_radius,
            p=2,
            samples=2000,
            seed=seed,
            inflate=1.25,
        )


# ---------------------------------------------------------------------------
# Post-hoc Lipschitz estimation
# ---------------------------------------------------------------------------


def _ball_samples(rng, center: np.ndarray, radius: float, p, count: int) -> np.ndarray:
    n = len(center)
    if p == 2:
        d = rng.normal(size=(count, n))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        r = radius * rng.uniform(size=count) ** (1.0 / n)
        return center + d * r[:, None]
    if p == 1:
        e = rng.exponential(size=(count, n)) * rng.choice([-1.0, 1.0], size=(count, n))
        e /= np.sum(np.abs(e), axis=1, keepdims=True)
        r = radius * rng.uniform(size=count) ** (1.0 / n)
        return center + e * r[:, None]
    return center + rng.uniform(-radius, radius, size=(count, n))


def lipschitz_sample_estimate(
    fun: Callable[[np.ndarray], np.ndarray],
    center: np.ndarray,
    radius: float,
    p=2,
    samples: int = 1000,
    seed: int = 0,
    inflate: float = 1.0,
) -> float:
    """Max difference quotient of `fun` over random point pairs in a p-norm ball.

    `fun` must accept a batch (N, n) and return (N,) or (N, k); vector outputs
    are compared in the 2-norm. This is a lower estimate of the true constant;
    pass inflate > 1 when using it as a bound.
    """
    if samples < 2:
        raise FeatureError("need at least 2 samples")
    rng = np.random.default_rng(seed)
    center = np.asarray(center, dtype=float)
    A = _ball_samples(rng, center, radius, p, samples)
    B = _ball_samples(rng, center, radius, p, samples)
    dist = _p_norm(A - B, p)
    ok = dist > 1e-12
    if not np.any(ok):
        return 0.0
    FA = np.asarray(fun(A[ok]), dtype=float).reshape(int(ok.sum()), -1)
    FB = np.asarray(fun(B[ok]), dtype=float).reshape(int(ok.sum()), -1)
    num = np.linalg.norm(FA - FB, axis=1)
    return float(inflate * np.max(num / dist[ok]))


def _p_norm(diff: np.ndarray, p) -> np.ndarray:
    if p == 2:
        return np.linalg.norm(diff, axis=-1)
    if p == 1:
        return np.sum(np.abs(diff), axis=-1)
    return np.max(np.abs(diff), axis=-1)


# ---------------------------------------------------------------------------
# Model file round trip
# ---------------------------------------------------------------------------


def save_model(path, model: CbfModel) -> None:
    if model.variant == "rff":
        payload = {
            "variant": "rff",
            "input_dim": model.rff.input_dim,
            "num_features": model.rff.num_features,
            "bandwidth": model.rff.bandwidth,
            "seed": model.rff.seed,
            "alpha_coef": model.alpha_coef,
            "theta": model.theta.tolist(),
            "provenance": model.provenance,
        }
    else:
        payload = {
            "variant": "mlp",
            "input_dim": model.mlp.input_dim,
            "widths": model.mlp.widths,
            "alpha_coef": model.alpha_coef,
            "weights": [w.tolist() for w in model.mlp.weights],
            "biases": [b.tolist() for b in model.mlp.biases],
            "provenance": model.provenance,
        }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path) -> CbfModel:
    with open(path) as fh:
        payload = json.load(fh)
    variant = payload.get("variant")
    if variant == "rff":
        m = rff_init(
            payload["num_features"], payload["input_dim"], payload["bandwidth"], payload["seed"]
        )
        return CbfModel(
            variant="rff",
            rff=m,
            theta=np.asarray(payload["theta"], dtype=float),
            alpha_coef=float(payload["alpha_coef"]),
            provenance=payload.get("provenance", {}),
        )
    if variant == "mlp":
        mlp = MlpModel(
            weights=[np.asarray(w, dtype=float) for w in payload["weights"]],
            biases=[np.asarray(b, dtype=float) for b in payload["biases"]],
        )
        return CbfModel(
            variant="mlp",
            mlp=mlp,
            alpha_coef=float(payload["alpha_coef"]),
            provenance=payload.get("provenance", {}),
        )
    raise FeatureError(f"unknown model variant {variant!r} in {path}")
