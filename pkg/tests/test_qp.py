"""Solver tests against a brute-force active-set enumeration oracle."""

from itertools import combinations

import numpy as np
import pytest

from cbflearn.qp import QpInputError, QuadraticProgram, check_kkt, solve_qp


def active_set_oracle(qp: QuadraticProgram):
    """Enumerate candidate active sets, solve each KKT system, keep the
    feasible point with the best objective. Two-sided rows are split into
    one-sided inequalities first. Independent of the solver's code path."""
    n = qp.num_vars
    rows, rhs = [], []
    for i in range(qp.num_constraints):
        if np.isfinite(qp.ub[i]):
            rows.append(qp.A[i])
            rhs.append(qp.ub[i])
        if np.isfinite(qp.lb[i]):
            rows.append(-qp.A[i])
            rhs.append(-qp.lb[i])
    G = np.asarray(rows)
    h = np.asarray(rhs)
    best_obj, best_x = np.inf, None
    for k in range(0, n + 1):
        for S in combinations(range(len(G)), k):
            S = list(S)
            if k:
                K = np.block([[qp.P, G[S].T], [G[S], np.zeros((k, k))]])
                r = np.concatenate([-qp.q, h[S]])
            else:
                K, r = qp.P, -qp.q
            try:
                sol = np.linalg.solve(K, r)
            except np.linalg.LinAlgError:
                continue
            x, lam = sol[:n], sol[n:]
            if np.max(np.abs(K @ sol - r)) > 1e-8:
                continue
            if k and np.any(lam < -1e-9):
                continue
            if len(G) and np.any(G @ x > h + 1e-9):
                continue
            obj = qp.objective(x)
            if obj < best_obj - 1e-12:
                best_obj, best_x = obj, x
    return best_obj, best_x


def random_feasible_qp(rng, n_max=6, m_max=10):
    n = int(rng.integers(2, n_max + 1))
    m = int(rng.integers(1, m_max + 1))
    M = rng.normal(size=(n, n))
    P = M @ M.T + 0.5 * np.eye(n)
    q = rng.normal(size=n)
    A = rng.normal(size=(m, n))
    x_feas = rng.normal(size=n)
    vals = A @ x_feas
    ub = vals + np.abs(rng.normal(size=m)) * 0.5
    lb = np.full(m, -np.inf)
    two_sided = rng.random(m) < 0.3
    lb[two_sided] = vals[two_sided] - np.abs(rng.normal(size=int(two_sided.sum()))) - 0.05
    return QuadraticProgram(P=P, q=q, A=A, lb=lb, ub=ub)


def test_halfspace_projection():
    qp = QuadraticProgram(
        P=2 * np.eye(3), q=np.zeros(3), A=np.array([[1.0, 0, 0]]), lb=[1.0], ub=[np.inf]
    )
    sol = solve_qp(qp)
    assert sol.status == "optimal"
    assert np.allclose(sol.x, [1.0, 0.0, 0.0], atol=1e-8)
    assert sol.duals[0] == pytest.approx(2.0, abs=1e-6)


def test_box_clamp():
    c = np.array([2.0, -0.5, 3.0, 0.1])
    qp = QuadraticProgram(
        P=2 * np.eye(4), q=-2 * c, A=np.eye(4), lb=-np.ones(4), ub=np.ones(4)
    )
    sol = solve_qp(qp)
    assert sol.status == "optimal"
    assert np.allclose(sol.x, np.clip(c, -1, 1), atol=1e-8)


def test_unconstrained_qp():
    rng = np.random.default_rng(0)
    M = rng.normal(size=(4, 4))
    P = M @ M.T + np.eye(4)
    q = rng.normal(size=4)
    qp = QuadraticProgram(P=P, q=q, A=np.zeros((0, 4)), lb=np.zeros(0), ub=np.zeros(0))
    sol = solve_qp(qp)
    assert np.allclose(sol.x, np.linalg.solve(P, -q), atol=1e-8)
    assert check_kkt(qp, sol.x, sol.duals, 1e-8)


def test_oracle_battery_small():
    rng = np.random.default_rng(7)
    for _ in range(30):
        qp = random_feasible_qp(rng)
        sol = solve_qp(qp, tol=1e-8)
        obj, x = active_set_oracle(qp)
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(obj, abs=1e-6)
        assert np.max(np.abs(sol.x - x)) < 1e-5
        assert sol.primal_residual <= 1e-8
        assert sol.dual_residual <= 1e-7
        assert check_kkt(qp, sol.x, sol.duals, 1e-8)


def test_objective_beats_feasible_witnesses():
    rng = np.random.default_rng(12)
    for _ in range(10):
        qp = random_feasible_qp(rng)
        sol = solve_qp(qp, tol=1e-8)
        for _ in range(50):
            z = rng.normal(size=qp.num_vars)
            vals = qp.A @ z
            if np.all(vals >= qp.lb - 1e-12) and np.all(vals <= qp.ub + 1e-12):
                assert sol.objective <= qp.objective(z) + 1e-6


def test_scaling_invariance_of_argmin():
    rng = np.random.default_rng(5)
    qp = random_feasible_qp(rng)
    sol1 = solve_qp(qp, tol=1e-9)
    qp2 = QuadraticProgram(P=7.0 * qp.P, q=7.0 * qp.q, A=qp.A, lb=qp.lb, ub=qp.ub)
    sol2 = solve_qp(qp2, tol=1e-9)
    assert np.max(np.abs(sol1.x - sol2.x)) < 1e-6


def test_determinism():
    rng = np.random.default_rng(9)
    qp = random_feasible_qp(rng)
    a = solve_qp(qp)
    b = solve_qp(qp)
    assert np.array_equal(a.x, b.x)
    assert a.iterations == b.iterations


def test_primal_infeasible_detection():
    phi = np.array([[1.0, 2.0]])
    qp = QuadraticProgram(
        P=2 * np.eye(2),
        q=np.zeros(2),
        A=np.vstack([phi, phi]),
        lb=[1.0, -np.inf],
        ub=[np.inf, -1.0],
    )
    sol = solve_qp(qp)
    assert sol.status == "primal_infeasible"
    assert sol.most_violated in (0, 1)


def test_non_psd_rejected():
    qp = QuadraticProgram(
        P=np.array([[1.0, 0.0], [0.0, -1.0]]),
        q=np.zeros(2),
        A=np.zeros((0, 2)),
        lb=np.zeros(0),
        ub=np.zeros(0),
    )
    with pytest.raises(QpInputError):
        solve_qp(qp)


def test_asymmetric_p_rejected():
    with pytest.raises(QpInputError):
        solve_qp(
            QuadraticProgram(
                P=np.array([[1.0, 0.5], [0.0, 1.0]]),
                q=np.zeros(2),
                A=np.zeros((0, 2)),
                lb=np.zeros(0),
                ub=np.zeros(0),
            )
        )


def test_bound_order_validated():
    with pytest.raises(QpInputError):
        QuadraticProgram(P=np.eye(1), q=np.zeros(1), A=np.eye(1), lb=[1.0], ub=[0.0])


def test_check_kkt_rejects_perturbed_point():
    qp = QuadraticProgram(
        P=2 * np.eye(2), q=np.zeros(2), A=np.array([[1.0, 0.0]]), lb=[1.0], ub=[np.inf]
    )
    assert check_kkt(qp, np.array([1.0, 0.0]), np.array([2.0]), 1e-8)
    assert not check_kkt(qp, np.array([1.1, 0.0]), np.array([2.0]), 1e-8)
    # wrong-signed dual attached to a lower bound
    assert not check_kkt(qp, np.array([1.0, 0.0]), np.array([-2.0]), 1e-8)


def test_degenerate_duplicate_rows():
    # near-duplicate rows emulate dense sample-based constraints
    rng = np.random.default_rng(3)
    base = rng.normal(size=(1, 4))
    A = np.vstack([base + 1e-7 * rng.normal(size=(30, 4)), rng.normal(size=(5, 4))])
    x_feas = rng.normal(size=4)
    ub = A @ x_feas + 0.1
    qp = QuadraticProgram(P=2 * np.eye(4), q=rng.normal(size=4), A=A,
                          lb=np.full(35, -np.inf), ub=ub)
    sol = solve_qp(qp, tol=1e-8)
    assert sol.status == "optimal"
    assert np.all(qp.A @ sol.x <= qp.ub + 1e-7)
