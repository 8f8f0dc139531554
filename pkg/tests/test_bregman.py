import math

import numpy as np
import pytest
import torch

from permlp import bregman
from permlp.bregman import SolverConfig, project_marginals, project_set_i, project_set_ii
from permlp.perm_scores import ScoreBundle
from permlp.posterior import generalized_kl
from permlp.tensor_engine import NEG_INF, SOLVER_DTYPE
from conftest import central_difference, rel_err


def t(a):
    return torch.as_tensor(np.asarray(a, dtype=np.float64))


def kl(p, q):
    p, q = np.asarray(p), np.asarray(q)
    return float(np.sum(np.where(p > 0, p * np.log(np.where(p > 0, p, 1) / q), 0) - p + q))


# -- init ------------------------------------------------------------------------


def test_init_zero_scores():
    sb = ScoreBundle.from_numpy(np.zeros(3), np.zeros(3), np.zeros((3, 3)), 1.0)
    st = bregman.init_state(sb)
    assert torch.equal(st.log_u, torch.zeros(3, 3, dtype=SOLVER_DTYPE))


def test_init_direct_formula():
    start = np.zeros(4)
    start[2] = 2.0
    sb = ScoreBundle.from_numpy(start, np.zeros(4), np.zeros((4, 4)), 0.5)
    assert float(bregman.init_state(sb).log_u[2, 0]) == 4.0


def test_init_w_constant_over_columns(rng):
    sb = ScoreBundle.random(4, rng, tau=0.7)
    w = bregman.init_state(sb, self_jumps=True).log_w
    jump = sb.jump.numpy()
    for i in range(4):
        for k in range(4):
            col = w[i, 1:, k].numpy()
            assert np.all(col == col[0])
            assert col[0] == pytest.approx(jump[k, i] / 0.7)
    assert torch.all(w[:, 0, :] == NEG_INF)


def test_init_excludes_self_jumps_by_default(rng):
    w = bregman.init_state(ScoreBundle.random(4, rng)).log_w
    assert all(torch.all(w[i, 1:, i] == NEG_INF) for i in range(4))


# -- single-marginal projection ------------------------------------------------


def test_project_marginals_symmetric():
    out = project_marginals(torch.zeros(2, 2, dtype=SOLVER_DTYPE), t([1, 1]), axis=-1)
    assert np.allclose(np.exp(out.numpy()), 0.5)


def test_project_marginals_fixed_point():
    a = t(np.log([[0.2, 0.8], [0.6, 0.4]]))
    out = project_marginals(a, t([1, 1]), axis=-1)
    assert np.allclose(out.numpy(), a.numpy())


def test_project_marginals_infeasible():
    a = t([[0.0, 0.0], [NEG_INF, NEG_INF]])
    with pytest.raises(bregman.InfeasibleError):
        project_marginals(a, t([1, 1]), axis=-1)


def test_project_marginals_is_kl_nearest(rng):
    for _ in range(5):
        a = rng.uniform(0.1, 2.0, (3, 3))
        m = rng.uniform(0.5, 2.0, 3)
        proj = np.exp(project_marginals(t(np.log(a)), t(m), axis=-1).numpy())
        assert np.allclose(proj.sum(1), m, atol=1e-12)
        best = kl(proj, a)
        for _ in range(1000):
            cand = rng.dirichlet(np.ones(3), size=3) * m[:, None]
            assert best <= kl(cand, a) + 1e-12


# -- coupled U/W projections --------------------------------------------------


def random_state(rng, n, scale=1.0):
    log_u = t(scale * rng.standard_normal((n, n)))
    log_w = t(scale * rng.standard_normal((n, n, n)))
    return log_u, log_w


def test_set_i_uniform_n2():
    u, w = project_set_i(torch.zeros(2, 2, dtype=SOLVER_DTYPE), torch.zeros(2, 2, 2, dtype=SOLVER_DTYPE))
    assert np.allclose(np.exp(u.numpy()), 0.5)
    assert np.allclose(np.exp(w[:, 1, :].numpy()), 0.25)


def test_set_ii_uniform_n2():
    u, w = project_set_ii(torch.zeros(2, 2, dtype=SOLVER_DTYPE), torch.zeros(2, 2, 2, dtype=SOLVER_DTYPE))
    assert np.allclose(np.exp(u.numpy()), 0.5)
    assert np.allclose(np.exp(w[:, 1, :].numpy()), 0.25)


def test_set_i_geometric_mean_formula(rng):
    lu, lw = random_state(rng, 3)
    u, w = project_set_i(lu, lw)
    a, b = np.exp(lu.numpy()), np.exp(lw.numpy())
    tt = np.sqrt(a[:, 1:] * b[:, 1:, :].sum(-1))
    u_ref = tt / tt.sum(0)
    w_ref = u_ref[..., None] * b[:, 1:, :] / b[:, 1:, :].sum(-1, keepdims=True)
    assert np.allclose(np.exp(u.numpy())[:, 1:], u_ref, rtol=1e-12)
    assert np.allclose(np.exp(w.numpy())[:, 1:, :], w_ref, rtol=1e-12)
    assert np.allclose(np.exp(u.numpy())[:, 0], a[:, 0] / a[:, 0].sum())


def check_constraints(u, w, family):
    u, w = np.exp(u.numpy()), np.exp(w.numpy())
    errs = [np.abs(u.sum(0) - 1).max()]
    if u.shape[0] == 1:
        return max(errs)
    if family == "i":
        errs.append(np.abs(w[:, 1:, :].sum(-1) - u[:, 1:]).max())
    elif family == "ii":
        errs.append(np.abs(w[:, 1:, :].sum(0) - u[:, :-1].T).max())
    return max(errs)


@pytest.mark.parametrize("family", ["i", "ii"])
def test_projection_satisfies_own_constraints(rng, family):
    proj = project_set_i if family == "i" else project_set_ii
    for _ in range(20):
        n = int(rng.integers(1, 7))
        u, w = proj(*random_state(rng, n, 3.0))
        assert check_constraints(u, w, family) < 1e-10


def sample_feasible(rng, n, family, center=None, conc=None):
    """Random (U, W) meeting the column constraint and one W coupling."""
    def dirichlet(p):
        if center is None:
            return rng.dirichlet(np.ones(n))
        return rng.dirichlet(conc * p + 1e-3)

    u = np.stack([dirichlet(None if center is None else center[0][:, j]) for j in range(n)], 1)
    w = np.zeros((n, n, n))
    for j in range(1, n):
        for x in range(n):
            if family == "i":      # sum_k W[i, j, k] = U[i, j]
                p = None if center is None else center[1][x, j, :] / center[1][x, j, :].sum()
                w[x, j, :] = u[x, j] * dirichlet(p if p is not None else np.ones(n))
            else:                  # sum_i W[i, j, k] = U[k, j-1]
                p = None if center is None else center[1][:, j, x] / center[1][:, j, x].sum()
                w[:, j, x] = u[x, j - 1] * dirichlet(p if p is not None else np.ones(n))
    return u, w


@pytest.mark.parametrize("family", ["i", "ii"])
def test_projection_is_kl_nearest(rng, family):
    proj = project_set_i if family == "i" else project_set_ii
    for _ in range(3):
        n = int(rng.integers(2, 5))
        lu, lw = random_state(rng, n)
        a, b = np.exp(lu.numpy()), np.exp(lw.numpy())
        u, w = proj(lu, lw)
        pu, pw = np.exp(u.numpy()), np.exp(w.numpy())
        best = kl(pu, a) + kl(pw[:, 1:], b[:, 1:])
        for s in range(1000):
            if s % 2:
                cu, cw = sample_feasible(rng, n, family)
            else:
                cu, cw = sample_feasible(rng, n, family, (pu, pw), conc=float(rng.choice([20, 200, 2000])))
            assert best <= kl(cu, a) + kl(cw[:, 1:], b[:, 1:]) + 1e-10


# -- solve -----------------------------------------------------------------------


def test_solve_n1():
    sb = ScoreBundle.from_numpy([0.3], [-0.2], [[0.0]], 0.5)
    sp = bregman.solve(sb, SolverConfig(max_sweeps=1))
    assert sp.sweeps == 1 and np.allclose(sp.u.numpy(), [[1.0]])


def test_solve_symmetric_is_uniform():
    n = 5
    sb = ScoreBundle.from_numpy(np.zeros(n), np.zeros(n), np.full((n, n), 0.7), 0.5)
    sp = bregman.solve(sb, SolverConfig(max_sweeps=200, tol=1e-10))
    assert np.allclose(sp.u.numpy(), 1 / n, atol=1e-8)


def test_solve_satisfies_all_constraints(rng):
    sb = ScoreBundle.random(5, rng, tau=0.5)
    sp = bregman.solve(sb, SolverConfig(max_sweeps=2000, tol=1e-9))
    assert sp.converged and sp.violation < 1e-9
    u, w = sp.u.numpy(), sp.w.numpy()
    assert np.abs(u.sum(0) - 1).max() < 1e-9 and np.abs(u.sum(1) - 1).max() < 1e-9
    assert np.abs(w[:, 1:, :].sum(-1) - u[:, 1:]).max() < 1e-9
    assert np.abs(w[:, 1:, :].sum(0) - u[:, :-1].T).max() < 1e-9


def test_budget_exhaustion_is_flagged(rng):
    sp = bregman.solve(ScoreBundle.random(6, rng, tau=0.05), SolverConfig(max_sweeps=2))
    assert sp.sweeps == 2 and not sp.converged


def test_batched_matches_single(rng):
    bundles = [ScoreBundle.random(4, rng, tau=0.4) for _ in range(3)]
    batch = ScoreBundle(torch.stack([b.start for b in bundles]), torch.stack([b.end for b in bundles]),
                        torch.stack([b.jump for b in bundles]), torch.full((3,), 0.4, dtype=SOLVER_DTYPE))
    cfg = SolverConfig(max_sweeps=30, tol=1e-30)
    joint = bregman.solve(batch, cfg)
    for k, b in enumerate(bundles):
        assert torch.allclose(joint.log_u[k], bregman.solve(b, cfg).log_u, atol=1e-12)


def sinkhorn_reference(k_mat, iters=100000, tol=1e-13):
    r = np.ones(len(k_mat))
    c = np.ones(len(k_mat))
    for _ in range(iters):
        c = 1.0 / (k_mat.T @ r)
        r = 1.0 / (k_mat @ c)
        p = r[:, None] * k_mat * c[None, :]
        if np.abs(p.sum(0) - 1).max() < tol:
            break
    return p


def test_without_w_reduces_to_sinkhorn(rng):
    for _ in range(5):
        sb = ScoreBundle.random(5, rng, tau=0.5)
        sp = bregman.solve(sb, SolverConfig(max_sweeps=20000, tol=1e-12, use_w=False))
        ref = sinkhorn_reference(np.exp(sb.score_matrix().numpy() / 0.5))
        assert np.abs(sp.u.numpy() - ref).max() < 1e-6


def test_violation_trace_mostly_nonincreasing(rng):
    good = 0
    for _ in range(40):
        sp = bregman.solve(ScoreBundle.random(int(rng.integers(2, 7)), rng, tau=0.5),
                           SolverConfig(max_sweeps=50, tol=1e-12))
        tr = np.array(sp.trace)
        good += bool(np.all(np.diff(tr) <= 1e-12 + 1e-9 * tr[:-1]))
    assert good >= 0.95 * 40


def test_infeasible_start_raises():
    sb = ScoreBundle.from_numpy(np.zeros(2), np.zeros(2), np.zeros((2, 2)), 1.0)
    st = bregman.init_state(sb)
    st.log_u = torch.tensor([[NEG_INF, 0.0], [NEG_INF, 0.0]], dtype=SOLVER_DTYPE)
    with pytest.raises(bregman.InfeasibleError):
        bregman.run(st, SolverConfig())


def test_solver_gradient_matches_finite_differences(rng):
    # a linear functional of U and W, through 40 unrolled sweeps
    sb = ScoreBundle.random(4, rng, tau=0.5)
    cu = t(rng.standard_normal((4, 4)))
    cw = t(rng.standard_normal((4, 4, 4)))
    cfg = SolverConfig(max_sweeps=40, tol=1e-30)

    def f(jump):
        sp = bregman.solve(ScoreBundle(sb.start, sb.end, jump, 0.5), cfg)
        return (sp.u * cu).sum() + (sp.w[:, 1:] * cw[:, 1:]).sum()

    j = sb.jump.clone().requires_grad_(True)
    (g,) = torch.autograd.grad(f(j), [j])
    for _ in range(5):
        d = t(rng.standard_normal((4, 4)))
        assert rel_err(float((g * d).sum()), central_difference(f, sb.jump, d)) < 1e-5


def test_sharper_at_lower_temperature(rng):
    from permlp.oracle import brute_force_qap

    sb = ScoreBundle.from_numpy([2.0, 0, 0], [0, 0, 2.0], [[0, 2.0, 0], [0, 0, 2.0], [0, 0, 0]])
    best = brute_force_qap(sb).perm
    masses = []
    for tau in (1.0, 0.1, 0.02):
        sp = bregman.solve(ScoreBundle(sb.start, sb.end, sb.jump, tau), SolverConfig(max_sweeps=3000, tol=1e-8))
        masses.append(float(sp.u.numpy()[list(best), range(3)].sum()))
    assert masses[0] < masses[1] < masses[2]
