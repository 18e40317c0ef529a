"""Dense convex QP solver via ADMM operator splitting.

Solves   minimize 0.5 x'Px + q'x   subject to  lb <= Ax <= ub
with P symmetric PSD. The iteration follows the standard operator-splitting
scheme: Ruiz equilibration, over-relaxed ADMM with a step parameter adapted on
a fixed schedule, a divergence certificate for primal infeasibility, and an
active-set polishing step for high-accuracy solutions.

Dual convention of the returned multipliers: stationarity reads
P x + q - A' lam = 0 with lam_i >= 0 on active lower bounds, lam_i <= 0 on
active upper bounds, and lam_i = 0 on inactive rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = ["QuadraticProgram", "QpSolution", "QpInputError", "solve_qp", "check_kkt"]

INF = np.inf


class QpInputError(ValueError):
    pass


@dataclass
class QuadraticProgram:
    P: np.ndarray  # (k, k) symmetric PSD
    q: np.ndarray  # (k,)
    A: np.ndarray  # (c, k); c may be zero
    lb: np.ndarray  # (c,) entries may be -inf
    ub: np.ndarray  # (c,) entries may be +inf

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.q = np.asarray(self.q, dtype=float)
        k = len(self.q)
        if self.P.shape != (k, k):
            raise QpInputError("P must be square and match q")
        self.A = np.asarray(self.A, dtype=float).reshape(-1, k)
        self.lb = np.asarray(self.lb, dtype=float).ravel()
        self.ub = np.asarray(self.ub, dtype=float).ravel()
        if len(self.lb) != len(self.A) or len(self.ub) != len(self.A):
            raise QpInputError("bounds must match the constraint rows")
        if np.any(self.lb > self.ub):
            raise QpInputError("lb must be <= ub")

    @property
    def num_vars(self) -> int:
        return len(self.q)

    @property
    def num_constraints(self) -> int:
        return len(self.A)

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.P @ x + self.q @ x)


@dataclass
class QpSolution:
    x: np.ndarray
    status: str  # "optimal" | "primal_infeasible" | "max_iter"
    duals: np.ndarray  # lam, see module docstring
    primal_residual: float
    dual_residual: float
    duality_gap: float
    iterations: int
    objective: float = 0.0
    most_violated: int = -1  # row index, set for infeasible problems
    polished: bool = False


def _validate_psd(P: np.ndarray) -> np.ndarray:
    sym_gap = np.max(np.abs(P - P.T)) if P.size else 0.0
    if sym_gap > 1e-10 * max(1.0, np.max(np.abs(P))):
        raise QpInputError("P is not symmetric")
    P = 0.5 * (P + P.T)
    if P.size:
        w = np.linalg.eigvalsh(P)
        if w[0] < -1e-8 * max(1.0, w[-1]):
            raise QpInputError(f"P is not positive semidefinite (min eig {w[0]:.3e})")
    return P


def _ruiz_equilibrate(P, q, A, iters=10):
    """Scale the stacked KKT matrix toward unit row norms.

    Returns (Ps, qs, As, d, e, c) with Ps = c * D P D, As = E A D, qs = c * D q.
    """
    k, m = len(q), len(A)
    d = np.ones(k)
    e = np.ones(m)
    c = 1.0
    Ps, qs, As = P.copy(), q.copy(), A.copy()
    for _ in range(iters):
        col_norms = np.maximum(
            np.max(np.abs(Ps), axis=0, initial=0.0),
            np.max(np.abs(As), axis=0, initial=0.0) if m else 0.0,
        )
        row_norms = np.max(np.abs(As), axis=1, initial=0.0) if m else np.zeros(0)
        dd = 1.0 / np.sqrt(np.where(col_norms > 1e-12, col_norms, 1.0))
        ee = 1.0 / np.sqrt(np.where(row_norms > 1e-12, row_norms, 1.0))
        Ps = (Ps * dd).T * dd  # dd on both sides; Ps stays symmetric
        Ps = Ps.T
        qs = qs * dd
        if m:
            As = (As * dd) * ee[:, None]
        d *= dd
        e *= ee
        # cost scaling toward unit magnitude
        p_mean = np.mean(np.max(np.abs(Ps), axis=0)) if k else 1.0
        gamma = 1.0 / max(p_mean, np.max(np.abs(qs), initial=0.0), 1e-12)
        gamma = min(max(gamma, 1e-6), 1e6)
        Ps *= gamma
        qs *= gamma
        c *= gamma
    return Ps, qs, As, d, e, c


def _independent_rows(G: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Indices of a maximal linearly independent subset of rows, scanned in order."""
    kept: list[int] = []
    basis = np.zeros((0, G.shape[1]))
    for i, row in enumerate(G):
        r = row.copy()
        nrm0 = np.linalg.norm(r)
        if nrm0 == 0.0:
            continue
        if len(basis):
            r = r - basis.T @ (basis @ r)
            r = r - basis.T @ (basis @ r)  # second pass for stability
        nrm = np.linalg.norm(r)
        if nrm > rtol * nrm0:
            basis = np.vstack([basis, r / nrm])
            kept.append(i)
            if len(kept) == G.shape[1]:
                break
    return np.array(kept, dtype=int)


def _solve_eq_kkt(P, q, G, b):
    n, r = P.shape[0], len(G)
    K = np.zeros((n + r, n + r))
    K[:n, :n] = P
    K[:n, n:] = G.T
    K[n:, :n] = G
    rhs = np.concatenate([-q, b])
    sol = np.linalg.solve(K, rhs)
    res = rhs - K @ sol
    sol = sol + np.linalg.solve(K, res)
    return sol[:n], sol[n:]


def _polish(qp: QuadraticProgram, x, y, tol, max_updates: int = 60):
    """Working-set refinement from the splitting iterate.

    Seeds the working set from dual magnitudes and bound proximity, reduces it
    to independent rows (strongest duals first), then alternates equality KKT
    solves with add-most-violated / drop-wrong-signed updates. y follows the
    internal convention P x + q + A' y = 0 (y >= 0 at upper bounds). Returns
    (x, y, ok); failures leave the caller's iterate untouched.
    """
    n = qp.num_vars
    if qp.num_constraints == 0:
        try:
            x_pol = np.linalg.solve(qp.P, -qp.q)
        except np.linalg.LinAlgError:
            return x, y, False
        return x_pol, np.zeros(0), True
    A, lb, ub = qp.A, qp.lb, qp.ub
    z = A @ x
    atol = np.sqrt(max(tol, 1e-14))
    cand_lower = ((y < -atol) | (np.abs(z - lb) < atol)) & np.isfinite(lb)
    cand_upper = ((y > atol) | (np.abs(z - ub) < atol)) & np.isfinite(ub)
    cand_upper &= ~cand_lower
    # side per row: -1 lower-active, +1 upper-active, 0 inactive
    side = np.zeros(qp.num_constraints, dtype=int)
    side[cand_lower] = -1
    side[cand_upper] = 1
    scale = max(1.0, np.max(np.abs(qp.q), initial=0.0), np.max(np.abs(z), initial=0.0))
    feas_tol = max(tol, 1e-12) * scale

    for _ in range(max_updates):
        active = np.flatnonzero(side != 0)
        active = active[np.argsort(-np.abs(y[active]))] if len(active) else active
        if len(active):
            keep = _independent_rows(A[active])
            work = active[keep]
        else:
            work = np.zeros(0, dtype=int)
        G = A[work]
        b = np.where(side[work] < 0, lb[work], ub[work])
        try:
            x_new, nu = _solve_eq_kkt(qp.P, qp.q, G, b)
        except np.linalg.LinAlgError:
            return x, y, False
        z_new = A @ x_new
        viol_lo = lb - z_new
        viol_hi = z_new - ub
        worst_lo = int(np.argmax(viol_lo)) if len(viol_lo) else 0
        worst_hi = int(np.argmax(viol_hi)) if len(viol_hi) else 0
        if len(viol_lo) and max(viol_lo[worst_lo], viol_hi[worst_hi]) > feas_tol:
            if viol_lo[worst_lo] >= viol_hi[worst_hi]:
                row, want = worst_lo, -1
            else:
                row, want = worst_hi, 1
            if side[row] == want:
                # violated row already in the working set: the active geometry
                # is degenerate beyond what a vertex solve can pin down
                return x, y, False
            side[row] = want
            continue
        # dual sign check: lower-active need nu <= 0, upper-active nu >= 0
        wrong = np.zeros(len(work), dtype=bool)
        if len(work):
            wrong = np.where(side[work] < 0, nu > atol, nu < -atol)
        if np.any(wrong):
            drop = work[np.argmax(np.abs(nu) * wrong)]
            side[drop] = 0
            continue
        y_new = np.zeros(qp.num_constraints)
        if len(work):
            y_new[work] = nu
        return x_new, y_new, True
    return x, y, False


def _recover_duals(qp: QuadraticProgram, x: np.ndarray, slack_tol: float) -> np.ndarray:
    """Fit multipliers on the near-active rows by nonnegative least squares.

    Returns lam with P x + q - A' lam ~= 0, lam >= 0 on lower-active rows and
    lam <= 0 on upper-active rows.
    """
    from scipy.optimize import nnls

    z = qp.A @ x
    grad = qp.P @ x + qp.q
    act_lo = np.flatnonzero(np.isfinite(qp.lb) & (z - qp.lb <= slack_tol))
    act_hi = np.flatnonzero(np.isfinite(qp.ub) & (qp.ub - z <= slack_tol))
    cols = []
    if len(act_lo):
        cols.append(qp.A[act_lo].T)
    if len(act_hi):
        cols.append(-qp.A[act_hi].T)
    lam = np.zeros(qp.num_constraints)
    if not cols:
        return lam
    E = np.hstack(cols)
    mu, _ = nnls(E, grad, maxiter=max(30 * E.shape[1], 1000))
    lam[act_lo] += mu[: len(act_lo)]
    lam[act_hi] -= mu[len(act_lo) :]
    return lam


def _ldp_refine(qp: QuadraticProgram, tol: float):
    """Exact least-distance solve for strictly convex problems.

    With P positive definite the QP maps to min ||w|| subject to G w >= b,
    which the classic nonnegative-least-squares reduction solves exactly in
    finitely many steps. This is the refinement of choice when the active set
    is a near-continuum of almost-parallel rows (dense sample-based
    constraints) and both splitting iterations and vertex polishing stall.
    Returns (x, y_internal, ok) with y in the P x + q + A' y = 0 convention.
    """
    from scipy.linalg import solve_triangular
    from scipy.optimize import nnls

    n = qp.num_vars
    try:
        L = np.linalg.cholesky(qp.P)
    except np.linalg.LinAlgError:
        return None, None, False
    v = solve_triangular(L, qp.q, lower=True)
    # rows in w coordinates: ghat' w >= bhat
    Ghat_T = solve_triangular(L, qp.A.T, lower=True) if qp.num_constraints else np.zeros((n, 0))
    rows = []
    rhs = []
    for i in range(qp.num_constraints):
        if np.isfinite(qp.lb[i]):
            rows.append(Ghat_T[:, i])
            rhs.append(qp.lb[i] + Ghat_T[:, i] @ v)
        if np.isfinite(qp.ub[i]):
            rows.append(-Ghat_T[:, i])
            rhs.append(-(qp.ub[i] + Ghat_T[:, i] @ v))
    if not rows:
        w = np.zeros(n)
    else:
        G = np.asarray(rows)
        b = np.asarray(rhs)
        E = np.vstack([G.T, b[None, :]])
        f = np.zeros(n + 1)
        f[n] = 1.0
        try:
            u_sol, _ = nnls(E, f, maxiter=max(30 * E.shape[1], 2000))
        except Exception:
            return None, None, False
        r = E @ u_sol - f
        if abs(r[n]) < 1e-12:
            return None, None, False  # constraints incompatible
        w = -r[:n] / r[n]
    x = solve_triangular(L.T, w - v, lower=False)
    if not np.all(np.isfinite(x)):
        return None, None, False
    scale = max(1.0, np.max(np.abs(qp.A @ x), initial=0.0)) if qp.num_constraints else 1.0
    lam = _recover_duals(qp, x, slack_tol=np.sqrt(tol) * scale)
    return x, -lam, True


def _residuals(qp, x, y):
    z = qp.A @ x if qp.num_constraints else np.zeros(0)
    r_prim = 0.0
    if qp.num_constraints:
        r_prim = max(
            np.max(np.maximum(qp.lb - z, 0.0), initial=0.0),
            np.max(np.maximum(z - qp.ub, 0.0), initial=0.0),
        )
    r_dual = float(np.max(np.abs(qp.P @ x + qp.q + (qp.A.T @ y if qp.num_constraints else 0.0))))
    return float(r_prim), r_dual, z


def _duality_gap(qp, x, y, z):
    yp = np.maximum(y, 0.0)
    ym = np.maximum(-y, 0.0)
    sup = 0.0
    if qp.num_constraints:
        ub = np.where(np.isfinite(qp.ub), qp.ub, 0.0)
        lb = np.where(np.isfinite(qp.lb), qp.lb, 0.0)
        bad = (yp > 1e-10) & ~np.isfinite(qp.ub)
        bad |= (ym > 1e-10) & ~np.isfinite(qp.lb)
        if np.any(bad):
            return float("inf")
        sup = float(ub @ yp - lb @ ym)
    primal = qp.objective(x)
    dual = -0.5 * float(x @ qp.P @ x) - sup
    return abs(primal - dual)


def solve_qp(
    qp: QuadraticProgram,
    tol: float = 1e-8,
    max_iter: int = 20000,
    rho: float = 0.1,
    sigma: float = 1e-6,
    over_relax: float = 1.6,
    check_interval: int = 25,
    rho_interval: int = 100,
    polish_interval: int = 250,
    refine_trigger: Optional[int] = None,
) -> QpSolution:
    """ADMM solve of the QP; see the module docstring for the formulation.

    Beyond plain iteration, the solver periodically attempts an active-set
    polish from the current iterate, and if the splitting iteration is still
    undecided after `refine_trigger` iterations it runs an exact
    least-distance refinement. Either refined point is returned immediately once its KKT
    conditions verify at the target tolerance; failed refinements fall back
    to the plain iteration. This is what achieves high accuracy on
    constraint-heavy degenerate problems where the splitting iteration alone
    stalls at moderate residuals.
    """
    P = _validate_psd(qp.P)
    qp = QuadraticProgram(P, qp.q, qp.A, qp.lb, qp.ub)
    n, m = qp.num_vars, qp.num_constraints

    if m == 0:
        x = np.linalg.solve(P + sigma * np.eye(n), -qp.q)
        for _ in range(3):
            x = x + np.linalg.solve(P + sigma * np.eye(n), -(P @ x + qp.q))
        r_prim, r_dual, z = _residuals(qp, x, np.zeros(0))
        return QpSolution(
            x=x, status="optimal", duals=np.zeros(0), primal_residual=r_prim,
            dual_residual=r_dual, duality_gap=_duality_gap(qp, x, np.zeros(0), z),
            iterations=0, objective=qp.objective(x), polished=True,
        )

    if refine_trigger is None:
        refine_trigger = min(1000, max(200, max_iter // 4))
    refine_tried = False

    Ps, qs, As, dvec, evec, cscale = _ruiz_equilibrate(qp.P, qp.q, qp.A, iters=10)
    lbs = qp.lb * evec
    ubs = qp.ub * evec

    def factor(rho_val):
        return np.linalg.cholesky(Ps + sigma * np.eye(n) + rho_val * As.T @ As)

    L = factor(rho)
    x = np.zeros(n)
    z = np.clip(np.zeros(m), lbs, ubs)
    y = np.zeros(m)
    status = "max_iter"
    most_violated = -1
    it = 0

    for it in range(1, max_iter + 1):
        rhs = sigma * x - qs + As.T @ (rho * z - y)
        x_t = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
        z_t = As @ x_t
        x_new = over_relax * x_t + (1.0 - over_relax) * x
        z_mid = over_relax * z_t + (1.0 - over_relax) * z + y / rho
        z_new = np.clip(z_mid, lbs, ubs)
        y_new = rho * (z_mid - z_new)
        dy = y_new - y
        x, z, y = x_new, z_new, y_new

        if it % check_interval == 0:
            xu = dvec * x
            yu = (evec * y) / cscale
            zu = z / evec
            Axu = qp.A @ xu
            r_prim = np.max(np.abs(Axu - zu), initial=0.0)
            r_dual = np.max(np.abs(qp.P @ xu + qp.q + qp.A.T @ yu))
            eps_prim = tol + tol * max(
                np.max(np.abs(Axu), initial=0.0), np.max(np.abs(zu), initial=0.0)
            )
            eps_dual = tol + tol * max(
                np.max(np.abs(qp.P @ xu)),
                np.max(np.abs(qp.A.T @ yu), initial=0.0),
                np.max(np.abs(qp.q)),
            )
            if r_prim <= eps_prim and r_dual <= eps_dual:
                status = "optimal"
                break

            candidates = []
            if it % polish_interval == 0 and m <= 1500:
                candidates.append(_polish(qp, xu, yu, tol))
            if it >= refine_trigger and not refine_tried:
                refine_tried = True
                candidates.append(_ldp_refine(qp, tol))
            for x_try, y_try, ok in candidates:
                if not ok:
                    continue
                rp_t, rd_t, z_t_un = _residuals(qp, x_try, y_try)
                if check_kkt(qp, x_try, -y_try, max(tol, 1e-9)):
                    return QpSolution(
                        x=x_try,
                        status="optimal",
                        duals=-y_try,
                        primal_residual=rp_t,
                        dual_residual=rd_t,
                        duality_gap=_duality_gap(qp, x_try, y_try, z_t_un),
                        iterations=it,
                        objective=qp.objective(x_try),
                        polished=True,
                    )

            # primal infeasibility certificate from the dual increment
            dyu = (evec * dy) / cscale
            norm_dy = np.max(np.abs(dyu), initial=0.0)
            if norm_dy > 1e-12:
                eps_inf = 1e-6 * norm_dy
                dyp = np.maximum(dyu, 0.0)
                dym = np.maximum(-dyu, 0.0)
                mass_on_inf = (
                    np.any(dyp[~np.isfinite(qp.ub)] > eps_inf)
                    if np.any(~np.isfinite(qp.ub))
                    else False
                ) or (
                    np.any(dym[~np.isfinite(qp.lb)] > eps_inf)
                    if np.any(~np.isfinite(qp.lb))
                    else False
                )
                if not mass_on_inf and np.max(np.abs(qp.A.T @ dyu)) <= eps_inf:
                    ub0 = np.where(np.isfinite(qp.ub), qp.ub, 0.0)
                    lb0 = np.where(np.isfinite(qp.lb), qp.lb, 0.0)
                    if ub0 @ dyp - lb0 @ dym < -eps_inf:
                        status = "primal_infeasible"
                        viol = np.maximum(qp.lb - Axu, 0.0) + np.maximum(Axu - qp.ub, 0.0)
                        most_violated = int(np.argmax(viol))
                        break

        if it % rho_interval == 0:
            xu = dvec * x
            yu = (evec * y) / cscale
            Axu = qp.A @ xu
            zu = z / evec
            r_prim = np.max(np.abs(Axu - zu), initial=0.0)
            r_dual = np.max(np.abs(qp.P @ xu + qp.q + qp.A.T @ yu))
            denom_p = max(np.max(np.abs(Axu), initial=0.0), np.max(np.abs(zu), initial=0.0), 1e-12)
            denom_d = max(
                np.max(np.abs(qp.P @ xu)),
                np.max(np.abs(qp.A.T @ yu), initial=0.0),
                np.max(np.abs(qp.q)),
                1e-12,
            )
            ratio = np.sqrt(max(r_prim / denom_p, 1e-16) / max(r_dual / denom_d, 1e-16))
            rho_new = float(np.clip(rho * ratio, 1e-6, 1e6))
            if rho_new > 5.0 * rho or rho_new < rho / 5.0:
                rho = rho_new
                L = factor(rho)

    x_out = dvec * x
    y_out = (evec * y) / cscale

    if status == "primal_infeasible":
        return QpSolution(
            x=x_out, status=status, duals=-y_out, primal_residual=float("inf"),
            dual_residual=float("inf"), duality_gap=float("inf"), iterations=it,
            objective=qp.objective(x_out), most_violated=most_violated,
        )

    polished = False
    if status == "optimal":
        x_pol, y_pol, ok = _polish(qp, x_out, y_out, tol)
        if ok:
            rp_new, rd_new, _ = _residuals(qp, x_pol, y_pol)
            rp_old, rd_old, _ = _residuals(qp, x_out, y_out)
            if max(rp_new, rd_new) <= max(max(rp_old, rd_old), tol):
                x_out, y_out, polished = x_pol, y_pol, True

    r_prim, r_dual, z_out = _residuals(qp, x_out, y_out)
    return QpSolution(
        x=x_out,
        status=status,
        duals=-y_out,
        primal_residual=r_prim,
        dual_residual=r_dual,
        duality_gap=_duality_gap(qp, x_out, y_out, z_out),
        iterations=it,
        objective=qp.objective(x_out),
        polished=polished,
    )


def _kkt_margin(qp: QuadraticProgram, x: np.ndarray, lam: np.ndarray, tol: float) -> float:
    """Worst KKT clause as a multiple of its tolerance (<= 1 means verified)."""
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    scale = max(1.0, np.max(np.abs(qp.q), initial=0.0), np.max(np.abs(x), initial=0.0))
    stat = qp.P @ x + qp.q - (qp.A.T @ lam if qp.num_constraints else 0.0)
    worst = np.max(np.abs(stat), initial=0.0) / (tol * scale)
    if qp.num_constraints == 0:
        return max(worst, np.max(np.abs(lam), initial=0.0) / tol)
    z = qp.A @ x
    viol = max(
        np.max(qp.lb - z, initial=0.0),
        np.max(z - qp.ub, initial=0.0),
    )
    worst = max(worst, viol / (tol * scale))
    lam_pos = np.maximum(lam, 0.0)  # attached to lower bounds
    lam_neg = np.maximum(-lam, 0.0)  # attached to upper bounds
    inf_lo = lam_pos[~np.isfinite(qp.lb)]
    inf_hi = lam_neg[~np.isfinite(qp.ub)]
    worst = max(worst, np.max(inf_lo, initial=0.0) / tol, np.max(inf_hi, initial=0.0) / tol)
    # complementarity products live on the objective's scale
    comp_scale = max(scale, abs(qp.objective(x)))
    slack_lo = np.where(np.isfinite(qp.lb), z - qp.lb, 0.0)
    slack_hi = np.where(np.isfinite(qp.ub), qp.ub - z, 0.0)
    comp = max(
        np.max(lam_pos * np.abs(slack_lo), initial=0.0),
        np.max(lam_neg * np.abs(slack_hi), initial=0.0),
    )
    return max(worst, comp / (tol * comp_scale * 10.0))


def check_kkt(qp: QuadraticProgram, x: np.ndarray, duals: np.ndarray, tol: float) -> bool:
    """Verify stationarity, feasibility, and complementary slackness at (x, duals).

    Uses the documented convention P x + q - A' lam = 0 with lam >= 0 on lower
    bounds and lam <= 0 on upper bounds.
    """
    return _kkt_margin(qp, x, np.asarray(duals, dtype=float), tol) <= 1.0
