import io
import math

import numpy as np
import pytest

from graphdrs.factorization import (
    external_decomposition,
    incidence_decomposition,
    spectral_decomposition,
)
from graphdrs.graphs import (
    BilevelGraph,
    OrderedDigraph,
    algebraic_connectivity,
    laplacian,
    unbalance,
)
from graphdrs.operators import prox_translated_quadratic, zero_operator
from graphdrs.solver import (
    NumericalError,
    SolverConfig,
    StepPlan,
    compute_subgradients,
    lifted_ppp_step,
    lifted_reduce,
    lifted_resolvent_w,
    make_classical_drs,
    make_malitsky_tam,
    make_ryu,
    make_three_op_complete,
    run,
    run_wtilde,
    state_variance,
    step_general,
    step_tree,
    step_wtilde,
    tree_decomposition,
    write_trace,
)

rng = np.random.default_rng(42)


def complete(n):
    return OrderedDigraph(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


def quad_ops(centers, mu=1.0):
    return [prox_translated_quadratic(c, mu) for c in centers]


# ---------------------------------------------------------------------------
# configuration checks


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(sigma=0.0)
    with pytest.raises(ValueError):
        SolverConfig(sigma=1.0, theta=2.0)
    with pytest.raises(ValueError):
        SolverConfig(sigma=1.0, max_iter=0)
    with pytest.raises(ValueError):
        SolverConfig(sigma=1.0, tol=-1.0)


def test_theta_schedule_clamped():
    cfg = SolverConfig(sigma=1.0, theta=lambda k: 5.0 if k == 0 else -1.0)
    assert cfg.theta_at(0) == pytest.approx(2.0 - 1e-3)
    assert cfg.theta_at(1) == pytest.approx(1e-3)
    assert SolverConfig(sigma=1.0, theta=0.5).theta_at(9) == 0.5


# ---------------------------------------------------------------------------
# classical DRS cross-check (independent hand-coded loop)


def test_classical_drs_bitwise():
    bg = make_classical_drs()
    c1 = np.array([1.0, -3.0])
    c2 = np.array([5.0, 7.0])
    sigma, theta = 1.3, 1.0
    ops = quad_ops([c1, c2])
    decomp = tree_decomposition(bg)

    # hand-coded Douglas-Rachford with the closed-form resolvent
    # J(r) = (r + sigma*c)/(1 + sigma)
    w_ref = np.zeros(2)
    xs_ref = []
    for _ in range(1000):
        x1 = (1.0 * (1.0 * w_ref) + sigma * c1) / (1.0 + sigma)
        x2 = (2.0 * x1 + 1.0 * (-1.0 * w_ref) + sigma * c2) / (1.0 + sigma)
        w_ref = w_ref + theta * (x2 - x1)
        xs_ref.append((x1, x2))

    plan = StepPlan(bg, decomp.z)
    w = np.zeros((1, 2))
    for k in range(1000):
        x, w, _ = step_general(plan, ops, sigma, theta, w, k)
        assert np.abs(x[0] - xs_ref[k][0]).max() < 1e-12
        assert np.abs(x[1] - xs_ref[k][1]).max() < 1e-12
    assert np.abs(w[0] - w_ref).max() < 1e-12


def test_classical_drs_fixed_point():
    # two quadratics: solution of 0 = (x - c1) + (x - c2) is the midpoint
    bg = make_classical_drs()
    c1, c2 = np.array([0.0, 2.0]), np.array([4.0, -2.0])
    st, _ = run(
        bg, tree_decomposition(bg), quad_ops([c1, c2]),
        SolverConfig(sigma=1.0, max_iter=2000),
    )
    assert np.abs(st.x - (c1 + c2) / 2).max() < 1e-10


# ---------------------------------------------------------------------------
# golden special cases


@pytest.mark.parametrize("n", [3, 4, 5])
def test_ryu_transcription(n):
    bg = make_ryu(n)
    centers = [rng.standard_normal(2) for _ in range(n)]
    sigma, theta = 0.8, 1.0
    ops = quad_ops(centers)

    def j(i, r):
        tau = sigma / (n - 1)
        return (r + tau * centers[i]) / (1.0 + tau)

    w_ref = [np.zeros(2) for _ in range(n - 1)]
    plan = StepPlan(bg, tree_decomposition(bg).z)
    w = np.zeros((n - 1, 2))
    for k in range(200):
        x_ref = [None] * n
        for i in range(n - 1):
            x_ref[i] = j(
                i,
                (2.0 / (n - 1)) * sum((x_ref[h] for h in range(i)), np.zeros(2))
                + (1.0 / (n - 1)) * w_ref[i],
            )
        x_ref[n - 1] = j(
            n - 1,
            (2.0 / (n - 1)) * sum((x_ref[h] for h in range(n - 1)), np.zeros(2))
            - (1.0 / (n - 1)) * sum(w_ref, np.zeros(2)),
        )
        w_ref = [
            w_ref[i] + theta * (x_ref[n - 1] - x_ref[i]) for i in range(n - 1)
        ]
        x, w, _ = step_general(plan, ops, sigma, theta, w, k)
        assert np.abs(x - np.array(x_ref)).max() < 1e-12
        assert np.abs(w - np.array(w_ref)).max() < 1e-12


def test_three_op_complete_transcription():
    bg, decomp = make_three_op_complete()
    centers = [rng.standard_normal(2) for _ in range(3)]
    sigma, theta = 1.1, 1.0
    ops = quad_ops(centers)

    def j(i, r):
        tau = sigma / 2.0
        return (r + tau * centers[i]) / (1.0 + tau)

    wt1 = np.zeros(2)
    wt2 = np.zeros(2)
    plan = StepPlan(bg, decomp.z)
    w = np.zeros((2, 2))
    for k in range(200):
        x1 = j(0, 0.5 * wt1)
        x2 = j(1, x1 + 0.75 * wt2 - 0.25 * wt1)
        x3 = j(2, x1 + x2 - 0.75 * wt2 - 0.25 * wt1)
        wt1 = wt1 - theta * (2 * x1 - x2 - x3)
        wt2 = wt2 - theta * (x2 - x3)
        x, w, _ = step_general(plan, ops, sigma, theta, w, k)
        assert np.abs(x - np.array([x1, x2, x3])).max() < 1e-12
        # rescaled duals: wt1 = sqrt(2) w1, wt2 = sqrt(2/3) w2
        assert np.abs(math.sqrt(2.0) * w[0] - wt1).max() < 1e-12
        assert np.abs(math.sqrt(2.0 / 3.0) * w[1] - wt2).max() < 1e-12


def test_malitsky_tam_runs_to_consensus():
    bg = make_malitsky_tam(4)
    centers = [rng.standard_normal(3) for _ in range(4)]
    st, _ = run(
        bg, tree_decomposition(bg), quad_ops(centers),
        SolverConfig(sigma=1.0, max_iter=3000),
    )
    assert np.abs(st.x - np.mean(centers, axis=0)).max() < 1e-8


# ---------------------------------------------------------------------------
# formulation equivalences


def test_tree_step_matches_general_bitwise():
    bg = BilevelGraph(complete(4), OrderedDigraph(4, [(0, 1), (1, 2), (1, 3)]))
    ops = quad_ops([rng.standard_normal(2) for _ in range(4)])
    plan = StepPlan(bg, incidence_decomposition(bg.base).z)
    w = np.zeros((3, 2))
    we = np.zeros((3, 2))
    for k in range(100):
        xg, w, _ = step_general(plan, ops, 1.0, 1.0, w, k)
        xt, we = step_tree(bg, ops, 1.0, 1.0, we, k)
        assert np.array_equal(xg, xt)
        assert np.array_equal(w, we)


def test_wtilde_matches_general():
    # non-tree base: complete base graph on 4 nodes
    g = complete(4)
    bg = BilevelGraph(g, g)
    ops = quad_ops([rng.standard_normal(2) for _ in range(4)])
    decomp = spectral_decomposition(g)
    plan = StepPlan(bg, decomp.z)
    w = np.zeros((3, 2))
    wt = np.zeros((4, 2))
    for k in range(100):
        xg, w, _ = step_general(plan, ops, 1.0, 1.0, w, k)
        xw, wt = step_wtilde(bg, ops, 1.0, 1.0, wt, k)
        assert np.abs(xg - xw).max() < 1e-10
        # wt tracks Z w
        assert np.abs(wt - decomp.z @ w).max() < 1e-10


def test_wtilde_rejects_nonzero_sum():
    g = complete(3)
    bg = BilevelGraph(g, g)
    ops = quad_ops([np.zeros(2)] * 3)
    with pytest.raises(ValueError, match="sum to zero"):
        step_wtilde(bg, ops, 1.0, 1.0, np.ones((3, 2)))


def test_decomposition_independence_orthogonal():
    g = complete(4)
    bg = BilevelGraph(g, g)
    ops = quad_ops([rng.standard_normal(2) for _ in range(4)])
    z = spectral_decomposition(g).z
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    p1, p2 = StepPlan(bg, z), StepPlan(bg, z @ q)
    w1, w2 = np.zeros((3, 2)), np.zeros((3, 2))
    for k in range(100):
        x1, w1, _ = step_general(p1, ops, 1.0, 1.0, w1, k)
        x2, w2, _ = step_general(p2, ops, 1.0, 1.0, w2, k)
        assert np.abs(x1 - x2).max() < 1e-9


def test_decomposition_independence_incidence_vs_spectral():
    base = OrderedDigraph(4, [(0, 1), (1, 2), (2, 3)])
    bg = BilevelGraph(complete(4), base)
    ops = quad_ops([rng.standard_normal(2) for _ in range(4)])
    p1 = StepPlan(bg, incidence_decomposition(base).z)
    p2 = StepPlan(bg, spectral_decomposition(base).z)
    w1, w2 = np.zeros((3, 2)), np.zeros((3, 2))
    for k in range(100):
        x1, w1, _ = step_general(p1, ops, 1.0, 1.0, w1, k)
        x2, w2, _ = step_general(p2, ops, 1.0, 1.0, w2, k)
        assert np.abs(x1 - x2).max() < 1e-9


# ---------------------------------------------------------------------------
# lifted iteration


@pytest.mark.parametrize("n", [3, 4, 5])
def test_lifted_reduction_tracks_w(n):
    g = complete(n)
    bg = BilevelGraph(g, g)
    decomp = spectral_decomposition(g)
    ops = [
        prox_translated_quadratic(rng.standard_normal(3), mu)
        for mu in rng.uniform(0.5, 2.0, size=n)
    ]
    cfg = SolverConfig(sigma=1.2, theta=1.3)
    plan = StepPlan(bg, decomp.z)
    u = np.zeros((2 * n - 1, 3))
    w = np.zeros((n - 1, 3))
    for k in range(50):
        u = lifted_ppp_step(bg, decomp, ops, cfg, u, k)
        _, w, _ = step_general(plan, ops, cfg.sigma, cfg.theta_at(k), w, k)
        assert np.abs(lifted_reduce(decomp, u) - w).max() < 1e-9


def test_lifted_resolvent_identity():
    g = complete(4)
    bg = BilevelGraph(g, g)
    decomp = spectral_decomposition(g)
    ops = [
        prox_translated_quadratic(rng.standard_normal(2), mu)
        for mu in rng.uniform(0.5, 2.0, size=4)
    ]
    plan = StepPlan(bg, decomp.z)
    for _ in range(20):
        w = rng.standard_normal((3, 2))
        reduced = lifted_resolvent_w(bg, decomp, ops, 1.0, w)
        _, w_new, _ = step_general(plan, ops, 1.0, 1.0, w, 0)
        assert np.abs(reduced - w_new).max() < 1e-9


# ---------------------------------------------------------------------------
# diagnostics and traces


def test_subgradients_match_affine_operators():
    g = complete(4)
    base = OrderedDigraph(4, [(0, 1), (1, 2), (2, 3)])
    bg = BilevelGraph(g, base)
    centers = [rng.standard_normal(2) for _ in range(4)]
    mus = [1.0, 2.0, 0.5, 1.5]
    ops = [prox_translated_quadratic(c, m) for c, m in zip(centers, mus)]
    decomp = spectral_decomposition(base)
    plan = StepPlan(bg, decomp.z)
    w = rng.standard_normal((3, 2)) * 0.1
    x, _, _ = step_general(plan, ops, 1.3, 1.0, w, 0)
    a = compute_subgradients(bg, decomp.z, 1.3, w, x)
    expected = np.array([m * (xi - c) for m, xi, c in zip(mus, x, centers)])
    assert np.abs(a - expected).max() < 1e-10


def test_variance_and_residual_chain_sample():
    # both bounds of the diagnostic chain on one concrete run
    g = complete(4)
    base = OrderedDigraph(4, [(0, 1), (0, 2), (0, 3)])
    bg = BilevelGraph(g, base)
    ops = quad_ops([rng.standard_normal(2) for _ in range(4)])
    cfg = SolverConfig(sigma=2.0, max_iter=50)
    _, traces = run(bg, spectral_decomposition(base), ops, cfg)
    u = unbalance(g)
    lam1 = algebraic_connectivity(base)
    n = 4
    for rec in traces:
        left = (cfg.sigma**2 / n**2) * rec.subgrad_sum_norm**2
        mid = u**2 * rec.variance
        right = (u**2 / (lam1 * n)) * rec.residual_sq
        scale = max(right, 1e-30)
        assert left <= mid + 1e-8 * scale
        assert mid <= right + 1e-8 * scale


def test_residual_tol_stops_early():
    bg = make_classical_drs()
    ops = quad_ops([np.array([1.0]), np.array([3.0])])
    cfg = SolverConfig(sigma=1.0, max_iter=5000, tol=1e-20)
    st, traces = run(bg, tree_decomposition(bg), ops, cfg)
    assert st.k < 5000
    assert traces[-1].residual_sq < 1e-20


def test_nonfinite_raises():
    bg = make_classical_drs()

    def blowup(tau, r):
        return np.full_like(r, np.inf)

    from graphdrs.operators import Resolvent

    ops = [Resolvent(1, blowup), zero_operator(1)]
    with pytest.raises(NumericalError):
        run(bg, tree_decomposition(bg), ops, SolverConfig(sigma=1.0, max_iter=5))


def test_run_wtilde_matches_run():
    g = complete(4)
    bg = BilevelGraph(g, g)
    ops = quad_ops([rng.standard_normal(2) for _ in range(4)])
    cfg = SolverConfig(sigma=1.0, max_iter=80)
    st1, tr1 = run(bg, spectral_decomposition(g), ops, cfg)
    st2, tr2 = run_wtilde(bg, ops, cfg)
    assert np.abs(st1.x - st2.x).max() < 1e-9
    for r1, r2 in zip(tr1, tr2):
        assert r1.residual_sq == pytest.approx(r2.residual_sq, rel=1e-8, abs=1e-12)
        assert r1.variance == pytest.approx(r2.variance, rel=1e-8, abs=1e-12)


def test_trace_csv_format():
    bg = make_classical_drs()
    ops = quad_ops([np.array([1.0]), np.array([3.0])])
    _, traces = run(
        bg, tree_decomposition(bg), ops,
        SolverConfig(sigma=1.0, max_iter=3),
        objective=lambda xbar: float(np.sum(xbar**2)),
    )
    buf = io.StringIO()
    write_trace(traces, buf, comments=["seed = 0"])
    lines = buf.getvalue().splitlines()
    assert lines[0] == "# seed = 0"
    assert lines[1] == "iter,residual_sq,variance,subgrad_sum_norm,objective"
    assert len(lines) == 5
    fields = lines[2].split(",")
    assert fields[0] == "0"
    # 17 significant digits survive a parse roundtrip
    assert float(fields[1]) == traces[0].residual_sq


def test_state_variance_hand_value():
    x = np.array([[0.0, 0.0], [2.0, 0.0]])
    assert state_variance(x) == pytest.approx(1.0)
