import numpy as np
import pytest
from scipy.linalg import expm

from conftest import two_node
from gridlevels.control import distributed_gains
from gridlevels.dynamics import (Trace, build_isolated_matrices, build_linearized, integrate,
                                 node_blocks, rhs_combined, rhs_isolated, rhs_reduced, simulate,
                                 simulate_linear)
from gridlevels.errors import ConfigError, DimensionError, DomainError, NumericalError
from gridlevels.network import NetworkGraph, NodeParams
from gridlevels.steady_state import StateLayout, solve_synchronous_state, to_deviation


@pytest.fixture(scope="module")
def small_sm(small_graph, small_state):
    return build_linearized(small_graph, small_state)


@pytest.fixture(scope="module")
def small_closed(small_graph, small_sm):
    F, _ = distributed_gains(small_graph)
    return F, small_sm.A_tilde + small_sm.B @ F


# ---- right-hand sides --------------------------------------------------------

def test_rhs_zero_at_equilibrium(default_graph, default_state):
    f = rhs_combined(default_graph, default_state.full())
    assert np.max(np.abs(f)) <= 10 * max(default_state.residual_norm, 1e-15)


def test_rhs_single_node():
    g = NetworkGraph([NodeParams.with_injections(0, 1.0, 1.0, 1.0, 1.0)], [], 0)
    np.testing.assert_array_equal(rhs_combined(g, [0.0, 1.0, 1.0]), [1.0, -1.0, -1.0])


def test_rhs_two_node_flow_formula():
    g = two_node(b=1.5, k=2.0, p2=0.3, q=0.4, m=2.0, d=0.5, tau=0.7)
    x = np.array([0.1, 0.2, 1.05, -0.3, -0.1, 0.95])
    f = rhs_combined(g, x)
    th12 = 0.1 - (-0.3)
    P12 = 1.5 * 1.05 * 0.95 * np.sin(th12)
    Q12 = -1.5 * 1.05 * 0.95 * np.cos(th12)
    w1 = (-0.5 * 0.2 + (-0.3) - P12) / 2.0
    w2 = (-0.5 * -0.1 + 0.3 + P12) / 2.0
    v1 = (-2.0 * 1.05 + 0.4 - Q12) / 0.7
    v2 = (-2.0 * 0.95 + 0.4 - Q12) / 0.7
    np.testing.assert_allclose(f, [0.2, w1, v1, -0.1, w2, v2], rtol=1e-14, atol=1e-15)


def test_rhs_domain_and_dimension(small_graph, small_state):
    x = small_state.full()
    x[5] = -0.1
    with pytest.raises(DomainError):
        rhs_combined(small_graph, x)
    with pytest.raises(DimensionError):
        rhs_combined(small_graph, x[:-1])
    with pytest.raises(DimensionError):
        rhs_combined(small_graph, small_state.full(), np.zeros(3))


def test_rhs_isolated_equilibrium_and_linearity(small_graph, small_state):
    sm = build_isolated_matrices(small_graph)
    lay = StateLayout.of(small_graph)
    f0 = rhs_isolated(small_graph, small_state, np.zeros(lay.dim))
    assert np.max(np.abs(f0)) <= 10 * small_state.residual_norm
    rng = np.random.default_rng(0)
    x, u = rng.standard_normal(lay.dim), rng.standard_normal(2 * small_graph.n)
    np.testing.assert_allclose(rhs_isolated(small_graph, small_state, x, u), sm.A @ x + sm.B @ u,
                               rtol=1e-12, atol=1e-12)


def test_rhs_isolated_step_input(small_graph, small_state):
    lay = StateLayout.of(small_graph)
    i = 4
    u = np.zeros(2 * small_graph.n)
    u[2 * i] = small_graph.m[i]
    f = rhs_isolated(small_graph, small_state, np.zeros(lay.dim), u)
    assert f[lay.omega[i]] == pytest.approx(1.0, abs=1e-14)


def test_rhs_isolated_flows_dimension(small_graph, small_state):
    lay = StateLayout.of(small_graph)
    with pytest.raises(DimensionError):
        rhs_isolated(small_graph, small_state, np.zeros(lay.dim), fixed_flows=(np.zeros(2),) * 2)
    with pytest.raises(DimensionError):
        rhs_isolated(small_graph, small_state, np.zeros(3))


# ---- matrices ----------------------------------------------------------------

def test_node_block_example():
    nodes = [NodeParams.with_injections(0, 1.0, 1.0, 1.0, 1.0),
             NodeParams.with_injections(1, 2.0, 4.0, 1.0, 3.0)]
    from gridlevels.network import LineParams
    g = NetworkGraph(nodes, [LineParams(0, 1, 1.0)], 0)
    (Ag, Bg, _), (A1, B1, C1) = node_blocks(g)
    np.testing.assert_array_equal(A1, [[0, 1, 0], [0, -2, 0], [0, 0, -3]])
    np.testing.assert_array_equal(B1, [[0, 0], [0.5, 0], [0, 1]])
    np.testing.assert_array_equal(C1, np.diag([1.0, 0.0, 1.0]))
    np.testing.assert_array_equal(Ag, np.diag([-1.0, -1.0]))
    np.testing.assert_array_equal(Bg, np.diag([1.0, 1.0]))


def test_reference_output_variants(small_graph):
    fixed = node_blocks(small_graph, c_v=2.0, c_omega_ref=0.5)[small_graph.reference][2]
    paper = node_blocks(small_graph, c_v=2.0, reference_output="paper")[small_graph.reference][2]
    np.testing.assert_array_equal(fixed, np.diag([0.5, 2.0]))
    np.testing.assert_array_equal(paper, np.diag([0.0, 2.0]))


def test_default_shapes(default_graph):
    sm = build_isolated_matrices(default_graph)
    assert sm.A.shape == (332, 332)
    assert sm.B.shape == (332, 222)
    assert sm.C_out.shape == (332, 332)


@pytest.mark.parametrize("kw", [{"c_theta": 0.0}, {"c_v": -1.0}, {"c_omega_ref": 0.0},
                                {"reference_output": "other"}])
def test_matrix_config_errors(small_graph, kw):
    with pytest.raises(ConfigError):
        build_isolated_matrices(small_graph, **kw)


def test_linearized_zero_angle_sin_entries():
    g = two_node(b=0.5, k=2.0, q=1.5, reference=1)
    s = solve_synchronous_state(g)
    assert np.all(s.theta == 0.0)
    sm = build_linearized(g, s)
    # node 0 is non-reference: rows (theta, omega, v) = 0, 1, 2; reference v at 4
    assert sm.A_x[1, 2] == 0.0 and sm.A_x[2, 0] == 0.0
    assert sm.A_hat[1, 4] == 0.0
    assert sm.A_hat[2, 0] == 0.0 and sm.A_x[1, 0] != 0.0


def _fd_jacobian(f, x, h=1e-6):
    return np.column_stack([(f(x + h * e) - f(x - h * e)) / (2 * h) for e in np.eye(x.size)])


def test_A_tilde_matches_finite_difference(default_graph, default_state):
    sm = build_linearized(default_graph, default_state)
    dim = StateLayout.of(default_graph).dim
    J = _fd_jacobian(lambda y: rhs_reduced(default_graph, default_state, y), np.zeros(dim))
    assert np.max(np.abs(J - sm.A_tilde)) <= 1e-5


def test_A_hat_non_adjacent_zero(default_graph, default_state):
    sm = build_linearized(default_graph, default_state)
    lay = StateLayout.of(default_graph)
    rows = {i: [k for k in (lay.theta[i], lay.omega[i], lay.v[i]) if k >= 0]
            for i in range(default_graph.n)}
    adj = set(zip(default_graph.line_from, default_graph.line_to))
    adj |= {(b, a) for a, b in adj}
    rng = np.random.default_rng(1)
    for _ in range(500):
        i, j = rng.integers(0, default_graph.n, 2)
        block = sm.A_hat[np.ix_(rows[i], rows[j])]
        if (i, j) not in adj:
            assert np.all(block == 0.0)


# ---- integration -------------------------------------------------------------

def test_integrate_exponential_decay():
    tr = integrate(lambda x, u: -x, [1.0], dt=0.01, T=1.0)
    assert tr.final[0] == pytest.approx(np.exp(-1.0), abs=1e-8)
    assert tr.times.size == 101
    assert np.all(np.diff(tr.times) > 0)


def test_integrate_zero_dynamics():
    x0 = np.array([0.3, -2.0, 7.0])
    tr = integrate(lambda x, u: np.zeros_like(x), x0, dt=0.1, T=2.0)
    assert np.all(tr.states == x0)


def test_integrate_nan_reports_step():
    def rhs(x, u):
        return np.array([np.nan]) if x[0] > 1.5 else np.ones(1)

    with pytest.raises(NumericalError) as err:
        integrate(rhs, [0.0], dt=0.5, T=5.0)
    # x reaches 1.5 after three steps; the fourth step's second stage fails
    assert err.value.step == 4


@pytest.mark.parametrize("kw", [{"dt": 0.0}, {"dt": 0.1, "T": 0.01}, {"mode": "euler"}])
def test_integrate_config_errors(kw):
    with pytest.raises(ConfigError):
        integrate(lambda x, u: -x, [1.0], **kw)


def test_zoh_vs_stage():
    # x' = u with u = -x: stage mode is RK4 on x' = -x, zoh holds u per step
    stage = integrate(lambda x, u: u, [1.0], controller=lambda x: -x, dt=0.1, T=1.0)
    zoh = integrate(lambda x, u: u, [1.0], controller=lambda x: -x, dt=0.1, T=1.0, mode="zoh")
    assert stage.final[0] == pytest.approx(np.exp(-1.0), abs=1e-6)
    assert zoh.final[0] == pytest.approx(0.9 ** 10, abs=1e-14)
    assert zoh.inputs[0, 0] == -1.0


def test_linear_closed_loop_matches_expm(small_graph, small_state, small_closed):
    F, Acl = small_closed
    lay = StateLayout.of(small_graph)
    x0 = np.random.default_rng(2).standard_normal(lay.dim) * 1e-3
    tr = simulate_linear(Acl, x0, dt=1e-3, T=1.0)
    ref = expm(Acl) @ x0
    assert np.linalg.norm(tr.final - ref) <= 1e-6 * np.linalg.norm(ref)


def test_fourth_order_convergence(small_closed):
    _, Acl = small_closed
    x0 = np.random.default_rng(3).standard_normal(Acl.shape[0])
    ref = expm(Acl) @ x0
    e1 = np.linalg.norm(simulate_linear(Acl, x0, dt=0.01, T=1.0).final - ref)
    e2 = np.linalg.norm(simulate_linear(Acl, x0, dt=0.005, T=1.0).final - ref)
    assert 8 <= e1 / e2 <= 32


def test_linear_nonlinear_agreement(small_graph, small_state, small_sm):
    lay = StateLayout.of(small_graph)
    z = np.random.default_rng(4).standard_normal(lay.dim)
    x0 = 1e-4 * z / np.linalg.norm(z)
    nl = simulate(small_graph, small_state, x0, dt=1e-3, T=1.0)
    lin = simulate_linear(small_sm.A_tilde, x0, dt=1e-3, T=1.0)
    nl_dev = nl.states[:, lay.keep] - small_state.full()[lay.keep]
    assert np.max(np.abs(nl_dev - lin.states)) <= 1e-6


def test_closed_loop_simulation_decays(small_graph, small_state, small_closed):
    F, _ = small_closed
    lay = StateLayout.of(small_graph)
    x0 = np.full(lay.dim, 1e-3)
    tr = simulate(small_graph, small_state, x0, F=F, dt=2e-3, T=10.0)
    final = to_deviation(small_graph, tr.final, small_state)
    assert np.linalg.norm(final) < 0.05 * np.linalg.norm(x0)
    assert tr.inputs.shape == (tr.times.size, 2 * small_graph.n)


def test_simulate_rejects_unknown_model(small_graph, small_state):
    with pytest.raises(ConfigError):
        simulate(small_graph, small_state, np.zeros(StateLayout.of(small_graph).dim), model="x")


def test_open_loop_stays_in_eps_ball(small_graph, small_state):
    from gridlevels.stability import build_hessian_blocks, check_certificate
    cert = check_certificate(build_hessian_blocks(small_graph, small_state), small_graph,
                             small_state)
    eps = cert.r
    lay = StateLayout.of(small_graph)
    z = np.random.default_rng(5).standard_normal(lay.dim)
    x0 = 0.99 * cert.delta(eps) * z / np.linalg.norm(z)
    tr = simulate(small_graph, small_state, x0, dt=5e-3, T=5.0, model="full")
    from gridlevels.steady_state import align_reference_angle
    norms = [np.linalg.norm(to_deviation(small_graph, align_reference_angle(small_graph, x,
                                                                            small_state),
                                         small_state)) for x in tr.states]
    assert max(norms) < eps


def test_trace_csv_roundtrip(tmp_path, small_graph, small_state, small_closed):
    F, _ = small_closed
    lay = StateLayout.of(small_graph)
    tr = simulate(small_graph, small_state, np.full(lay.dim, 1e-3), F=F, dt=1e-2, T=0.1)
    path = tmp_path / "trace.csv"
    tr.to_csv(path)
    header = path.read_text().splitlines()[0].split(",")
    assert header[:4] == ["t", "node0_theta", "node0_omega", "node0_v"]
    assert header[-1] == f"node{small_graph.n - 1}_u_v"
    back = Trace.from_csv(path)
    np.testing.assert_array_equal(back.times, tr.times)
    np.testing.assert_array_equal(back.states, tr.states)
    np.testing.assert_array_equal(back.inputs, tr.inputs)
