"""Validity checks for learned barrier candidates.

The machinery evaluates, at every sample point, the margin left after paying
the local-Lipschitz-times-net-radius price:

* safe slack      h(x_i) - L_h(x_i) * eps      (buffered safe samples, > 0)
* derivative slack q(x_i, u_i) - L_q(x_i) * eps (demonstrations, > 0)
* unsafe slack    h(x_i) + L_h(x_i) * eps_bar  (layer samples, < 0)

with q(x, u) = <grad h(x), f(x) + g(x) u> + alpha * h(x). Local constants come
in two modes: "gradient_norm" evaluates the gradient at the sample
(matching common practice, heuristic), "certified" adds radius times a bound
on the gradient's own Lipschitz constant, which soundly bounds the supremum
over the whole ball. A certificate additionally checks the net coverage of
the sample sets by witness sampling, the margin/radius ratio conditions, and
the buffer threshold recomputed with the measured constants.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from cbflearn import features as ft
from cbflearn.dynamics import ControlAffineSystem, eval_vector_field
from cbflearn.geometry import (
    NetReport,
    PointSet,
    min_distances,
    sample_layer_N,
    verify_net,
)

__all__ = [
    "ValidityReport",
    "ValidityCertificate",
    "VerifierError",
    "q_value",
    "grad_q",
    "local_l_h",
    "local_l_q",
    "slack_report",
    "certify",
    "sample_region_D",
    "grid_soundness",
    "GridSoundness",
    "report_to_dict",
    "certificate_to_dict",
    "save_report",
]

STRICT = 1e-9  # strict-inequality guard for slack sign checks


class VerifierError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# q and its gradient
# ---------------------------------------------------------------------------


def q_value(model, sys: ControlAffineSystem, hp, x: np.ndarray, u: np.ndarray) -> float:
    """q(x, u) = <grad h(x), f(x) + g(x) u> + alpha * h(x)."""
    v = eval_vector_field(sys, x, u)
    alpha_coef = hp.alpha_coef if hp is not None else model.alpha_coef
    return float(model.grad(x) @ v + alpha_coef * model.value(x))


def _q_batch(model, sys, alpha_coef, X, U) -> np.ndarray:
    V = np.stack([eval_vector_field(sys, x, u) for x, u in zip(X, U)])
    return np.sum(model.grad(X) * V, axis=1) + alpha_coef * np.atleast_1d(model.value(X))


def _vf_jacobian(sys: ControlAffineSystem, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    if sys.vf_jacobian is not None:
        return sys.vf_jacobian(x, u)
    n = sys.state_dim
    jac = np.empty((n, n))
    h = 1e-6
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        jac[:, j] = (
            eval_vector_field(sys, x + e, u) - eval_vector_field(sys, x - e, u)
        ) / (2.0 * h)
    return jac


def _hessian_apply(model, X: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Batched input-Hessian-vector products of h.

    Analytic for feature-map models; directional differences of the exact
    gradient otherwise (tanh networks and duck-typed analytic barriers).
    """
    if getattr(model, "variant", None) == "rff":
        return ft.rff_hessian_apply(model.rff, model.theta, X, V)
    h = 1e-6
    Vn = np.linalg.norm(V, axis=1, keepdims=True)
    Vn = np.where(Vn > 0, Vn, 1.0)
    D = V / Vn
    gp = np.atleast_2d(model.grad(X + h * D))
    gm = np.atleast_2d(model.grad(X - h * D))
    return (gp - gm) / (2.0 * h) * Vn


def grad_q(model, sys: ControlAffineSystem, hp, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Analytic gradient of x -> q(x, u) at fixed u.

    grad q = hess h @ v + (dv/dx)^T grad h + alpha grad h, v = f + g u.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    alpha_coef = hp.alpha_coef if hp is not None else model.alpha_coef
    v = eval_vector_field(sys, x, u)
    hv = _hessian_apply(model, x[None, :], v[None, :])[0]
    jac = _vf_jacobian(sys, x, u)
    g = model.grad(x)
    return hv + jac.T @ g + alpha_coef * g


def grad_q_fd(model, sys, hp, x, u, step: float = 1e-5) -> np.ndarray:
    """Central-difference fallback for grad q (used for cross-checks)."""
    n = len(x)
    out = np.empty(n)
    for j in range(n):
        e = np.zeros(n)
        e[j] = step
        out[j] = (
            q_value(model, sys, hp, x + e, u) - q_value(model, sys, hp, x - e, u)
        ) / (2.0 * step)
    return out


def _grad_q_batch(model, sys, alpha_coef, X, U) -> np.ndarray:
    V = np.stack([eval_vector_field(sys, x, u) for x, u in zip(X, U)])
    HV = _hessian_apply(model, X, V)
    G = model.grad(X)
    JG = np.stack([_vf_jacobian(sys, x, u).T @ g for x, u, g in zip(X, U, G)])
    return HV + JG + alpha_coef * G


# ---------------------------------------------------------------------------
# Local Lipschitz estimates
# ---------------------------------------------------------------------------


def _grad_lipschitz_bound(model, center: np.ndarray, radius: float, seed: int = 1234) -> float:
    """Bound on the Lipschitz constant of grad h near center (global for RFF)."""
    if model.variant == "rff":
        return ft.rff_hessian_bound(model.rff, model.theta)
    return ft.lipschitz_sample_estimate(
        lambda X: ft.mlp_input_gradient(model.mlp, X),
        center=center,
        radius=max(radius * 10.0, 1.0),
        p=2,
        samples=2000,
        seed=seed,
        inflate=1.25,
    )


def local_l_h(model, x: np.ndarray, radius: float, lip_mode: str = "gradient_norm") -> float:
    """Local Lipschitz estimate of h on the radius ball around x."""
    g = float(np.linalg.norm(model.grad(x)))
    if lip_mode == "gradient_norm":
        return g
    return g + radius * _grad_lipschitz_bound(model, np.asarray(x, dtype=float), radius)


def local_l_q(
    model,
    sys: ControlAffineSystem,
    hp,
    x: np.ndarray,
    u: np.ndarray,
    radius: float,
    lip_mode: Optional[str] = None,
    seed: int = 0,
    pairs: int = 64,
) -> float:
    """Local Lipschitz estimate of q on the radius ball around x (u fixed)."""
    mode = lip_mode or hp.lip_mode
    base = float(np.linalg.norm(grad_q(model, sys, hp, x, u)))
    if mode == "gradient_norm":
        return base
    alpha_coef = hp.alpha_coef if hp is not None else model.alpha_coef

    def gq(X):
        U = np.repeat(np.asarray(u, dtype=float)[None, :], len(X), axis=0)
        return _grad_q_batch(model, sys, alpha_coef, X, U)

    lip_gq = ft.lipschitz_sample_estimate(
        gq, center=np.asarray(x, dtype=float), radius=radius, p=2,
        samples=pairs, seed=seed, inflate=1.25,
    )
    return base + radius * lip_gq


# ---------------------------------------------------------------------------
# Reports and certificates
# ---------------------------------------------------------------------------


@dataclass
class ValidityReport:
    safe_slacks: np.ndarray
    dyn_slacks: np.ndarray
    unsafe_slacks: np.ndarray
    l_h_safe: np.ndarray
    l_h_layer: np.ndarray
    l_q: np.ndarray
    l_h_max: float
    l_q_max: float
    lip_mode: str
    passed: bool
    ratio_safe_ok: bool
    ratio_unsafe_ok: bool
    ratio_dyn_ok: bool
    worst_safe: int
    worst_dyn: int
    worst_unsafe: int
    h_safe: np.ndarray = field(default=None, repr=False)
    h_layer: np.ndarray = field(default=None, repr=False)
    q_dyn: np.ndarray = field(default=None, repr=False)


@dataclass
class ValidityCertificate:
    report: ValidityReport
    net_report_D: NetReport
    net_report_N: NetReport
    buffer_ok: bool
    buffer_threshold: float
    issued: bool
    lip_mode: str
    statement: dict
    warnings: list = field(default_factory=list)


def slack_report(model, bundle, hp) -> ValidityReport:
    """Evaluate the three slack families and the margin/radius ratio conditions."""
    eps = hp.net.epsilon
    eps_bar = hp.net.epsilon_bar
    Xs = bundle.x_safe_bar.points
    Xn = bundle.x_layer.points
    Xd = bundle.demos.states
    Ud = bundle.demos.inputs

    grad_norm_s = np.linalg.norm(model.grad(Xs), axis=1)
    grad_norm_n = np.linalg.norm(model.grad(Xn), axis=1)
    if hp.lip_mode == "certified":
        center = Xd.mean(axis=0)
        spread = float(np.max(np.linalg.norm(Xd - center, axis=1))) if len(Xd) else 1.0
        l_grad = _grad_lipschitz_bound(model, center, spread)
        l_h_safe = grad_norm_s + eps * l_grad
        l_h_layer = grad_norm_n + eps_bar * l_grad
    else:
        l_h_safe = grad_norm_s
        l_h_layer = grad_norm_n

    h_safe = np.atleast_1d(model.value(Xs))
    h_layer = np.atleast_1d(model.value(Xn))
    alpha_coef = hp.alpha_coef
    q_dyn = _q_batch(model, bundle.system, alpha_coef, Xd, Ud)

    gq = np.linalg.norm(_grad_q_batch(model, bundle.system, alpha_coef, Xd, Ud), axis=1)
    if hp.lip_mode == "certified":
        l_q = np.empty(len(Xd))
        for i, (x, u) in enumerate(zip(Xd, Ud)):
            l_q[i] = local_l_q(
                model, bundle.system, hp, x, u, eps, lip_mode="certified", seed=9000 + i
            )
    else:
        l_q = gq

    safe_slacks = h_safe - l_h_safe * eps
    unsafe_slacks = h_layer + l_h_layer * eps_bar
    dyn_slacks = q_dyn - l_q * eps

    ratio_safe_ok = bool(np.all(eps <= hp.gamma_safe / np.maximum(l_h_safe, 1e-300)))
    ratio_unsafe_ok = bool(np.all(eps_bar < hp.gamma_unsafe / np.maximum(l_h_layer, 1e-300)))
    ratio_dyn_ok = bool(np.all(eps <= hp.gamma_dyn / np.maximum(l_q, 1e-300)))

    slacks_ok = (
        bool(np.all(safe_slacks > STRICT))
        and bool(np.all(dyn_slacks > STRICT))
        and bool(np.all(unsafe_slacks < -STRICT))
    )
    return ValidityReport(
        safe_slacks=safe_slacks,
        dyn_slacks=dyn_slacks,
        unsafe_slacks=unsafe_slacks,
        l_h_safe=l_h_safe,
        l_h_layer=l_h_layer,
        l_q=l_q,
        l_h_max=float(np.max(np.concatenate([l_h_safe, l_h_layer]))),
        l_q_max=float(np.max(l_q)),
        lip_mode=hp.lip_mode,
        passed=slacks_ok and ratio_safe_ok and ratio_unsafe_ok and ratio_dyn_ok,
        ratio_safe_ok=ratio_safe_ok,
        ratio_unsafe_ok=ratio_unsafe_ok,
        ratio_dyn_ok=ratio_dyn_ok,
        worst_safe=int(np.argmin(safe_slacks)),
        worst_dyn=int(np.argmin(dyn_slacks)),
        worst_unsafe=int(np.argmax(unsafe_slacks)),
        h_safe=h_safe,
        h_layer=h_layer,
        q_dyn=q_dyn,
    )


def sample_region_D(
    x_safe: PointSet, epsilon: float, p, budget: int, rng_seed: int = 0
) -> PointSet:
    """Uniform witnesses of the coverage region (union of epsilon balls)."""
    rng = np.random.default_rng(rng_seed)
    lo = x_safe.points.min(axis=0) - epsilon
    hi = x_safe.points.max(axis=0) + epsilon
    out = []
    kept = 0
    while kept < budget:
        cand = rng.uniform(lo, hi, size=(max(1024, budget), x_safe.dim))
        d, _ = min_distances(cand, x_safe.points, p)
        sel = cand[d < epsilon]
        if len(sel):
            out.append(sel)
            kept += len(sel)
    pts = np.concatenate(out, axis=0)[:budget]
    return PointSet(dim=x_safe.dim, points=pts, tag="witness")


def certify(
    model,
    bundle,
    hp,
    witness_budget: int = 100_000,
    rng_seed: int = 0,
) -> ValidityCertificate:
    """Issue a validity certificate when every sufficient condition checks out.

    Sub-checks: the slack/ratio report, witness-based net coverage of the
    coverage region (safe samples at radius eps) and of the layer (layer
    samples at radius eps_bar), and the buffer threshold recomputed with the
    measured Lipschitz constant.
    """
    if len(bundle.x_layer) == 0:
        raise VerifierError("layer sample set is empty; nothing covers the boundary layer")
    report = slack_report(model, bundle, hp)
    p = hp.net.p
    x_safe_all = bundle.demos.safe_points()

    warnings = []
    heuristic = len(x_safe_all) * 3 ** bundle.demos.states.shape[1]
    if witness_budget < min(heuristic, 10_000_000):
        warnings.append(
            f"witness budget {witness_budget} below coverage heuristic {heuristic}; "
            "net checks may be optimistic"
        )

    d_wit = sample_region_D(x_safe_all, hp.net.epsilon, p, witness_budget, rng_seed)
    net_d = verify_net(x_safe_all, d_wit, hp.net.epsilon, p)
    n_wit = sample_layer_N(
        x_safe_all, hp.net.epsilon, hp.net.sigma, p, witness_budget, rng_seed + 1
    )
    net_n = verify_net(bundle.x_layer, n_wit, hp.net.epsilon_bar, p)

    l_h_layer_max = float(np.max(report.l_h_layer))
    threshold = (hp.gamma_unsafe + hp.gamma_safe) / l_h_layer_max
    d_buf, _ = min_distances(bundle.x_safe_bar.points, bundle.x_layer.points, p)
    buffer_ok = bool(np.all(d_buf >= threshold - 1e-12))

    issued = report.passed and net_d.covered and net_n.covered and buffer_ok
    statement = {
        "claim": "h is a valid local control barrier function on D with domain N ∪ D",
        "holds": issued,
        "lip_mode": hp.lip_mode,
        "mode_label": "sound" if hp.lip_mode == "certified" else "paper-faithful (heuristic)",
        "epsilon": hp.net.epsilon,
        "epsilon_bar": hp.net.epsilon_bar,
        "sigma": hp.net.sigma,
        "p": float(hp.net.p),
        "witnesses": witness_budget,
    }
    return ValidityCertificate(
        report=report,
        net_report_D=net_d,
        net_report_N=net_n,
        buffer_ok=buffer_ok,
        buffer_threshold=float(threshold),
        issued=issued,
        lip_mode=hp.lip_mode,
        statement=statement,
        warnings=warnings,
    )


# ---------------------------------------------------------------------------
# Dense-grid empirical soundness check
# ---------------------------------------------------------------------------


@dataclass
class GridSoundness:
    pitch: float
    n_dbar: int
    n_layer: int
    n_cover: int
    viol_dbar: int  # h < 0 on the buffered coverage region
    viol_layer: int  # h >= 0 on the layer
    viol_cover: int  # q < 0 on the coverage region

    @property
    def clean(self) -> bool:
        return self.viol_dbar == 0 and self.viol_layer == 0 and self.viol_cover == 0


def grid_soundness(model, bundle, hp, pitch: Optional[float] = None) -> GridSoundness:
    """Brute-force check of the certified claims on a dense grid.

    Classifies lattice points into the buffered coverage region (within eps of
    the buffered safe samples), the coverage region (within eps of any safe
    sample), and the layer shell, then checks the sign claims; q is evaluated
    with the expert input of the nearest safe sample.
    """
    eps = hp.net.epsilon
    if pitch is None:
        pitch = eps / 10.0
    Xs = bundle.demos.states
    lo = Xs.min(axis=0) - (eps + hp.net.sigma)
    hi = Xs.max(axis=0) + (eps + hp.net.sigma)
    axes = [np.arange(l, h + pitch / 2, pitch) for l, h in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    grid = np.stack([m.ravel() for m in mesh], axis=1)

    d_safe, nearest = min_distances(grid, Xs, hp.net.p)
    d_bar, _ = min_distances(grid, bundle.x_safe_bar.points, hp.net.p)
    in_cover = d_safe < eps
    in_dbar = d_bar < eps
    in_layer = (d_safe >= eps) & (d_safe <= eps + hp.net.sigma)

    h_all = np.atleast_1d(model.value(grid))
    viol_dbar = int(np.sum(h_all[in_dbar] < 0.0))
    viol_layer = int(np.sum(h_all[in_layer] >= 0.0))

    cover_idx = np.flatnonzero(in_cover)
    U = bundle.demos.inputs[nearest[cover_idx]]
    qv = _q_batch(model, bundle.system, hp.alpha_coef, grid[cover_idx], U)
    viol_cover = int(np.sum(qv < 0.0))

    return GridSoundness(
        pitch=float(pitch),
        n_dbar=int(in_dbar.sum()),
        n_layer=int(in_layer.sum()),
        n_cover=int(in_cover.sum()),
        viol_dbar=viol_dbar,
        viol_layer=viol_layer,
        viol_cover=viol_cover,
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def report_to_dict(report: ValidityReport) -> dict:
    return {
        "passed": report.passed,
        "lip_mode": report.lip_mode,
        "l_h_max": report.l_h_max,
        "l_q_max": report.l_q_max,
        "ratio_safe_ok": report.ratio_safe_ok,
        "ratio_unsafe_ok": report.ratio_unsafe_ok,
        "ratio_dyn_ok": report.ratio_dyn_ok,
        "min_safe_slack": float(np.min(report.safe_slacks)),
        "min_dyn_slack": float(np.min(report.dyn_slacks)),
        "max_unsafe_slack": float(np.max(report.unsafe_slacks)),
        "worst_safe": report.worst_safe,
        "worst_dyn": report.worst_dyn,
        "worst_unsafe": report.worst_unsafe,
        "counts": {
            "safe": len(report.safe_slacks),
            "dyn": len(report.dyn_slacks),
            "unsafe": len(report.unsafe_slacks),
        },
    }


def certificate_to_dict(cert: ValidityCertificate) -> dict:
    return {
        "issued": cert.issued,
        "lip_mode": cert.lip_mode,
        "statement": cert.statement,
        "buffer_ok": cert.buffer_ok,
        "buffer_threshold": cert.buffer_threshold,
        "net_D": {
            "covered": cert.net_report_D.covered,
            "worst_gap": cert.net_report_D.worst_gap,
            "radius": cert.net_report_D.radius,
            "num_witnesses": cert.net_report_D.num_witnesses,
        },
        "net_N": {
            "covered": cert.net_report_N.covered,
            "worst_gap": cert.net_report_N.worst_gap,
            "radius": cert.net_report_N.radius,
            "num_witnesses": cert.net_report_N.num_witnesses,
        },
        "warnings": cert.warnings,
        "report": report_to_dict(cert.report),
    }


def save_report(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
