"""Barrier-candidate training: convex margin program, penalty relaxation, bootstrap.

Two routes to a candidate h:

* convex: minimum-norm coefficients over a fixed random-feature map subject to
  linear margin constraints (value >= gamma_safe on the buffered safe set,
  value <= -gamma_unsafe on the layer samples, and the derivative margin
  q(x_i, u_i) >= gamma_dyn along the demonstrations);
* penalty: the unconstrained hinge relaxation of the same margins, minimized
  with Adam over a tanh network.

The bootstrap loop alternates training with Lipschitz measurement, growing the
assumed constants until the validity report passes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from cbflearn import features as ft
from cbflearn import verifier as vf
from cbflearn.dynamics import ControlAffineSystem, eval_vector_field
from cbflearn.geometry import DemonstrationSet, NetParams, PointSet, filter_inner_safe
from cbflearn.qp import QpSolution, QuadraticProgram, solve_qp

__all__ = [
    "HyperParams",
    "TrainingBundle",
    "TrainingBatch",
    "AdamConfig",
    "TrainingError",
    "InfeasibleTrainingError",
    "assemble_convex_program",
    "train_convex",
    "penalty_terms",
    "penalty_loss",
    "penalty_gradient",
    "train_penalty",
    "bootstrap",
    "BootstrapResult",
]


class TrainingError(RuntimeError):
    pass


class InfeasibleTrainingError(TrainingError):
    def __init__(self, message: str, most_violated: int = -1, block: str = ""):
        super().__init__(message)
        self.most_violated = most_violated
        self.block = block


@dataclass
class HyperParams:
    """Margins, penalty weights, and Lipschitz assumptions for training."""

    gamma_safe: float
    gamma_unsafe: float
    gamma_dyn: float
    net: NetParams
    lambda_safe: float = 1.0
    lambda_unsafe: float = 1.0
    lambda_dyn: float = 1.0
    alpha_coef: float = 1.0
    l_h_assumed: float = 1.0
    l_q_assumed: float = 1.0
    lip_mode: str = "certified"  # "certified" | "gradient_norm"

    def __post_init__(self):
        positive = (
            self.gamma_safe,
            self.gamma_unsafe,
            self.gamma_dyn,
            self.lambda_safe,
            self.lambda_unsafe,
            self.lambda_dyn,
            self.alpha_coef,
            self.l_h_assumed,
            self.l_q_assumed,
        )
        if any(v <= 0 or not np.isfinite(v) for v in positive):
            raise TrainingError("hyperparameters must be positive and finite")
        if self.lip_mode not in ("certified", "gradient_norm"):
            raise TrainingError("lip_mode must be 'certified' or 'gradient_norm'")


@dataclass
class TrainingBundle:
    """Datasets and model space for one training problem.

    On the theorem path x_safe_bar is the buffered subset of the expert states
    (see filter_inner_safe); on the filter-region path it holds samples of the
    surrounding safe annulus instead.
    """

    demos: DemonstrationSet
    x_safe_bar: PointSet
    x_layer: PointSet
    system: ControlAffineSystem
    features: Union[ft.RffMap, ft.MlpModel]

    def dyn_vector_fields(self) -> np.ndarray:
        V = np.empty_like(self.demos.states)
        for i, (x, u) in enumerate(zip(self.demos.states, self.demos.inputs)):
            V[i] = eval_vector_field(self.system, x, u)
        return V


def make_bundle(
    demos: DemonstrationSet,
    x_layer: PointSet,
    system: ControlAffineSystem,
    features_spec: Union[ft.RffMap, ft.MlpModel],
    hp: HyperParams,
) -> TrainingBundle:
    """Assemble a bundle, deriving the buffered safe set from the assumed L_h."""
    x_safe_bar = filter_inner_safe(
        demos.safe_points(),
        x_layer,
        hp.gamma_safe,
        hp.gamma_unsafe,
        hp.l_h_assumed,
        hp.net.p,
    )
    return TrainingBundle(
        demos=demos,
        x_safe_bar=x_safe_bar,
        x_layer=x_layer,
        system=system,
        features=features_spec,
    )


# ---------------------------------------------------------------------------
# Convex route (random-feature models)
# ---------------------------------------------------------------------------


def _dyn_rows(m: ft.RffMap, X: np.ndarray, V: np.ndarray, alpha_coef: float) -> np.ndarray:
    """Row i is Dphi(x_i) v_i + alpha * phi(x_i), so that row @ theta = q(x_i, u_i)."""
    Z = X @ m.W.T + m.b
    rows = -m.scale * (np.sin(Z) * (V @ m.W.T))
    rows += alpha_coef * m.scale * np.cos(Z)
    return rows


def assemble_convex_program(bundle: TrainingBundle, hp: HyperParams) -> QuadraticProgram:
    """Stack the margin constraints into a QP over the feature coefficients."""
    if not isinstance(bundle.features, ft.RffMap):
        raise TrainingError("the convex route requires a random-feature map")
    m = bundle.features
    if len(bundle.x_safe_bar) == 0:
        raise TrainingError("buffered safe set is empty")
    phi_safe = ft.rff_features(m, bundle.x_safe_bar.points)
    phi_unsafe = ft.rff_features(m, bundle.x_layer.points)
    dyn = _dyn_rows(m, bundle.demos.states, bundle.dyn_vector_fields(), hp.alpha_coef)
    A = np.vstack([phi_safe, phi_unsafe, dyn])
    n_s, n_u, n_d = len(phi_safe), len(phi_unsafe), len(dyn)
    lb = np.concatenate([
        np.full(n_s, hp.gamma_safe),
        np.full(n_u, -np.inf),
        np.full(n_d, hp.gamma_dyn),
    ])
    ub = np.concatenate([
        np.full(n_s, np.inf),
        np.full(n_u, -hp.gamma_unsafe),
        np.full(n_d, np.inf),
    ])
    return QuadraticProgram(
        P=2.0 * np.eye(m.num_features), q=np.zeros(m.num_features), A=A, lb=lb, ub=ub
    )


def _block_of(bundle: TrainingBundle, row: int) -> tuple[str, int]:
    n_s = len(bundle.x_safe_bar)
    n_u = len(bundle.x_layer)
    if row < n_s:
        return "safe", row
    if row < n_s + n_u:
        return "unsafe", row - n_s
    return "dyn", row - n_s - n_u


def train_convex(
    bundle: TrainingBundle,
    hp: HyperParams,
    tol: float = 1e-6,
    max_iter: int = 40000,
) -> ft.CbfModel:
    """Solve the margin QP; returns a random-feature model with hp provenance."""
    qp = assemble_convex_program(bundle, hp)
    sol: QpSolution = solve_qp(qp, tol=tol, max_iter=max_iter)
    if sol.status == "primal_infeasible":
        block, idx = _block_of(bundle, sol.most_violated)
        raise InfeasibleTrainingError(
            f"margin constraints are infeasible (worst: {block} row {idx}); "
            "consider shrinking the margins or growing the layer gap",
            most_violated=sol.most_violated,
            block=block,
        )
    if sol.status != "optimal":
        raise TrainingError(f"QP solve did not converge ({sol.status})")
    viol = max(
        np.max(np.maximum(qp.lb - qp.A @ sol.x, 0.0), initial=0.0),
        np.max(np.maximum(qp.A @ sol.x - qp.ub, 0.0), initial=0.0),
    )
    if viol > 1e-6:
        raise TrainingError(f"constraint violation {viol:.3e} above 1e-6 after solve")
    return ft.CbfModel(
        variant="rff",
        rff=bundle.features,
        theta=sol.x,
        alpha_coef=hp.alpha_coef,
        provenance={
            "route": "convex",
            "gamma_safe": hp.gamma_safe,
            "gamma_unsafe": hp.gamma_unsafe,
            "gamma_dyn": hp.gamma_dyn,
            "alpha_coef": hp.alpha_coef,
            "qp_iterations": sol.iterations,
        },
    )


# ---------------------------------------------------------------------------
# Penalty route (hinge relaxation)
# ---------------------------------------------------------------------------


@dataclass
class TrainingBatch:
    safe_states: np.ndarray
    unsafe_states: np.ndarray
    dyn_states: np.ndarray
    dyn_vfields: np.ndarray
    # weights compensate mini-batch subsampling so sums match the full dataset
    safe_weight: float = 1.0
    unsafe_weight: float = 1.0
    dyn_weight: float = 1.0


def full_batch(bundle: TrainingBundle) -> TrainingBatch:
    return TrainingBatch(
        safe_states=bundle.x_safe_bar.points,
        unsafe_states=bundle.x_layer.points,
        dyn_states=bundle.demos.states,
        dyn_vfields=bundle.dyn_vector_fields(),
    )


def _model_values(model: ft.CbfModel, X: np.ndarray) -> np.ndarray:
    return np.atleast_1d(model.value(X)) if len(X) else np.zeros(0)


def _dyn_values(model: ft.CbfModel, X: np.ndarray, V: np.ndarray, alpha_coef: float):
    if len(X) == 0:
        return np.zeros(0)
    grads = model.grad(X)
    return np.sum(grads * V, axis=1) + alpha_coef * np.atleast_1d(model.value(X))


def _reg_value(model: ft.CbfModel) -> float:
    if model.variant == "rff":
        return float(model.theta @ model.theta)
    vec = ft.flatten_params(model.mlp)
    return float(vec @ vec)


def penalty_terms(model: ft.CbfModel, batch: TrainingBatch, hp: HyperParams) -> dict:
    """Breakdown of the relaxed objective: reg + weighted hinge sums."""
    h_safe = _model_values(model, batch.safe_states)
    h_unsafe = _model_values(model, batch.unsafe_states)
    r_dyn = _dyn_values(model, batch.dyn_states, batch.dyn_vfields, hp.alpha_coef)
    return {
        "reg": _reg_value(model),
        "safe": batch.safe_weight
        * hp.lambda_safe
        * float(np.sum(np.maximum(hp.gamma_safe - h_safe, 0.0))),
        "unsafe": batch.unsafe_weight
        * hp.lambda_unsafe
        * float(np.sum(np.maximum(h_unsafe + hp.gamma_unsafe, 0.0))),
        "dyn": batch.dyn_weight
        * hp.lambda_dyn
        * float(np.sum(np.maximum(hp.gamma_dyn - r_dyn, 0.0))),
    }


def penalty_loss(model: ft.CbfModel, batch: TrainingBatch, hp: HyperParams) -> float:
    return float(sum(penalty_terms(model, batch, hp).values()))


def penalty_gradient(model: ft.CbfModel, batch: TrainingBatch, hp: HyperParams) -> np.ndarray:
    """Exact gradient of the relaxed objective with respect to the parameters.

    Hinge subgradients at the kink are taken as zero (the inactive side). For
    tanh networks the derivative-margin term needs the mixed second-order
    gradient d/dtheta <grad_x h, v>, computed by forward-over-reverse
    accumulation. Returns a flat vector matching flatten_params (MLP) or theta
    (random features).
    """
    h_safe = _model_values(model, batch.safe_states)
    h_unsafe = _model_values(model, batch.unsafe_states)
    r_dyn = _dyn_values(model, batch.dyn_states, batch.dyn_vfields, hp.alpha_coef)
    act_s = hp.gamma_safe - h_safe > 0.0
    act_u = h_unsafe + hp.gamma_unsafe > 0.0
    act_d = hp.gamma_dyn - r_dyn > 0.0
    c_safe = np.where(act_s, -batch.safe_weight * hp.lambda_safe, 0.0)
    c_unsafe = np.where(act_u, batch.unsafe_weight * hp.lambda_unsafe, 0.0)
    c_dyn = np.where(act_d, -batch.dyn_weight * hp.lambda_dyn, 0.0)

    if model.variant == "rff":
        m, theta = model.rff, model.theta
        grad = 2.0 * theta
        if len(batch.safe_states):
            grad += ft.rff_features(m, batch.safe_states).T @ c_safe
        if len(batch.unsafe_states):
            grad += ft.rff_features(m, batch.unsafe_states).T @ c_unsafe
        if len(batch.dyn_states):
            rows = _dyn_rows(m, batch.dyn_states, batch.dyn_vfields, hp.alpha_coef)
            grad += rows.T @ c_dyn
        return grad

    mlp = model.mlp
    gW = [2.0 * w.copy() for w in mlp.weights]
    gb = [2.0 * b.copy() for b in mlp.biases]

    def _accumulate(parts):
        for target, part in zip((gW, gb), parts):
            for t, p in zip(target, part):
                t += p

    if np.any(c_safe):
        _accumulate(ft.mlp_param_gradient(mlp, batch.safe_states, weights_out=c_safe))
    if np.any(c_unsafe):
        _accumulate(ft.mlp_param_gradient(mlp, batch.unsafe_states, weights_out=c_unsafe))
    if np.any(c_dyn):
        _accumulate(
            ft.mlp_mixed_param_gradient(
                mlp, batch.dyn_states, batch.dyn_vfields, weights_out=c_dyn
            )
        )
        _accumulate(
            ft.mlp_param_gradient(mlp, batch.dyn_states, weights_out=hp.alpha_coef * c_dyn)
        )
    flat = np.concatenate([g.ravel() for g in gW] + [g.ravel() for g in gb])
    if not np.all(np.isfinite(flat)):
        raise TrainingError("non-finite penalty gradient")
    return flat


@dataclass
class AdamConfig:
    lr0: float = 1e-3
    epochs: int = 1000
    batch_size: Optional[int] = None  # None = full batch
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    log_every: int = 1


def _batches(bundle: TrainingBundle, dyn_v: np.ndarray, size: int, rng) -> list[TrainingBatch]:
    ns, nu, nd = len(bundle.x_safe_bar), len(bundle.x_layer), len(bundle.demos)
    n_steps = max(1, int(np.ceil(max(ns, nu, nd) / size)))

    def chunks(n):
        idx = rng.permutation(n)
        return [idx[i::n_steps] for i in range(n_steps)]

    cs, cu, cd = chunks(ns), chunks(nu), chunks(nd)
    out = []
    for s_idx, u_idx, d_idx in zip(cs, cu, cd):
        out.append(
            TrainingBatch(
                safe_states=bundle.x_safe_bar.points[s_idx],
                unsafe_states=bundle.x_layer.points[u_idx],
                dyn_states=bundle.demos.states[d_idx],
                dyn_vfields=dyn_v[d_idx],
                safe_weight=ns / max(1, len(s_idx)),
                unsafe_weight=nu / max(1, len(u_idx)),
                dyn_weight=nd / max(1, len(d_idx)),
            )
        )
    return out


def train_penalty(
    bundle: TrainingBundle,
    hp: HyperParams,
    opt: AdamConfig,
) -> tuple[ft.CbfModel, list[dict]]:
    """Adam with cosine-decayed learning rate on the penalty objective.

    Deterministic given opt.seed. Returns the trained model and a per-epoch
    log of the loss terms.
    """
    if not isinstance(bundle.features, ft.MlpModel):
        raise TrainingError("the penalty route requires an MLP feature spec")
    mlp = ft.MlpModel(
        weights=[w.copy() for w in bundle.features.weights],
        biases=[b.copy() for b in bundle.features.biases],
    )
    model = ft.CbfModel(variant="mlp", mlp=mlp, alpha_coef=hp.alpha_coef)
    params = ft.flatten_params(mlp)
    m_t = np.zeros_like(params)
    v_t = np.zeros_like(params)
    rng = np.random.default_rng(opt.seed)
    dyn_v = bundle.dyn_vector_fields()
    fb = TrainingBatch(
        safe_states=bundle.x_safe_bar.points,
        unsafe_states=bundle.x_layer.points,
        dyn_states=bundle.demos.states,
        dyn_vfields=dyn_v,
    )
    log: list[dict] = []
    step = 0
    if opt.batch_size is None:
        steps_per_epoch = 1
    else:
        steps_per_epoch = max(
            1,
            int(np.ceil(max(len(fb.safe_states), len(fb.unsafe_states), len(fb.dyn_states))
                        / opt.batch_size)),
        )
    total_steps = max(1, opt.epochs * steps_per_epoch)
    for epoch in range(opt.epochs):
        batches = (
            [fb] if opt.batch_size is None else _batches(bundle, dyn_v, opt.batch_size, rng)
        )
        epoch_loss = None
        for batch in batches:
            grad = penalty_gradient(model, batch, hp)
            lr = opt.lr0 * 0.5 * (1.0 + np.cos(np.pi * step / total_steps))
            m_t = opt.beta1 * m_t + (1.0 - opt.beta1) * grad
            v_t = opt.beta2 * v_t + (1.0 - opt.beta2) * grad * grad
            mhat = m_t / (1.0 - opt.beta1 ** (step + 1))
            vhat = v_t / (1.0 - opt.beta2 ** (step + 1))
            params = params - lr * mhat / (np.sqrt(vhat) + opt.eps)
            model.mlp = ft.unflatten_params(mlp, params)
            step += 1
        if epoch % opt.log_every == 0 or epoch == opt.epochs - 1:
            terms = penalty_terms(model, fb, hp)
            epoch_loss = sum(terms.values())
            log.append({"epoch": epoch, "loss": epoch_loss, **terms})
    model.provenance = {
        "route": "penalty",
        "gamma_safe": hp.gamma_safe,
        "gamma_unsafe": hp.gamma_unsafe,
        "gamma_dyn": hp.gamma_dyn,
        "alpha_coef": hp.alpha_coef,
        "epochs": opt.epochs,
        "lr0": opt.lr0,
        "seed": opt.seed,
    }
    return model, log


# ---------------------------------------------------------------------------
# Bootstrapping the Lipschitz assumptions
# ---------------------------------------------------------------------------


@dataclass
class BootstrapResult:
    model: ft.CbfModel
    report: "vf.ValidityReport"
    rounds_used: int
    succeeded: bool
    history: list = field(default_factory=list)


def bootstrap(
    bundle: TrainingBundle,
    hp0: HyperParams,
    max_rounds: int = 5,
    safety_factor: float = 1.1,
    trainer=None,
    **train_kwargs,
) -> BootstrapResult:
    """Iteratively train, measure the Lipschitz constants, and retighten.

    Each round rebuilds the buffered safe set from the current assumed L_h,
    trains, and checks the validity report. On failure the assumed constants
    are replaced by the measured ones times a safety factor. Returns the last
    model and report with a success flag; never raises on plain invalidity.
    """
    if max_rounds < 1:
        raise TrainingError("max_rounds must be >= 1")
    if trainer is None:
        trainer = train_convex
    hp = hp0
    history = []
    model = None
    report = None
    for round_idx in range(1, max_rounds + 1):
        current = make_bundle(bundle.demos, bundle.x_layer, bundle.system, bundle.features, hp)
        out = trainer(current, hp, **train_kwargs)
        model = out[0] if isinstance(out, tuple) else out
        report = vf.slack_report(model, current, hp)
        history.append(
            {
                "round": round_idx,
                "l_h_assumed": hp.l_h_assumed,
                "l_q_assumed": hp.l_q_assumed,
                "l_h_measured": report.l_h_max,
                "l_q_measured": report.l_q_max,
                "passed": report.passed,
                "num_safe_bar": len(current.x_safe_bar),
            }
        )
        if report.passed:
            return BootstrapResult(model, report, round_idx, True, history)
        hp = replace(
            hp,
            l_h_assumed=max(hp.l_h_assumed, safety_factor * report.l_h_max),
            l_q_assumed=max(hp.l_q_assumed, safety_factor * report.l_q_max),
        )
    return BootstrapResult(model, report, max_rounds, False, history)
