"""Nonlinear and linear bus dynamics, state-space matrices and RK4 traces.

Inputs are flat vectors of length ``2n`` ordered ``(u_omega_i, u_v_i)`` per
node. Two nonlinear models are provided:

* the free-reference model :func:`rhs_combined` on full states of length
  ``3n``, where every angle evolves;
* the pinned model :func:`rhs_reduced` on deviation vectors, where the
  reference angle is held at its synchronous value. Its Jacobian at the
  origin is ``A_tilde``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, DomainError, NumericalError
from .flows import node_flows
from .steady_state import StateLayout, align_reference_angle, from_deviation, to_deviation

__all__ = [
    "SystemMatrices",
    "Trace",
    "rhs_combined",
    "rhs_reduced",
    "rhs_isolated",
    "build_isolated_matrices",
    "build_linearized",
    "node_blocks",
    "integrate",
    "simulate",
    "simulate_linear",
]

log = logging.getLogger(__name__)


def _inputs(graph, u):
    if u is None:
        return np.zeros(graph.n), np.zeros(graph.n)
    u = np.asarray(u, float)
    if u.shape != (2 * graph.n,):
        raise DimensionError(f"expected an input vector of length {2 * graph.n}, got {u.shape}")
    return u[0::2], u[1::2]


def rhs_combined(graph, x, u=None):
    """Right-hand side of the combined swing/voltage dynamics.

    Parameters
    ----------
    graph : NetworkGraph
    x : ndarray, shape (3n,)
        Full state ``(theta_i, omega_i, v_i)`` per node.
    u : ndarray, shape (2n,), optional
        Storage inputs ``(u_omega_i, u_v_i)`` per node; zero by default.

    Returns
    -------
    ndarray, shape (3n,)
    """
    x = np.asarray(x, float)
    if x.shape != (3 * graph.n,):
        raise DimensionError(f"expected a full state of length {3 * graph.n}, got {x.shape}")
    theta, w, v = x[0::3], x[1::3], x[2::3]
    if np.any(v <= 0):
        raise DomainError("voltage must be positive")
    uw, uv = _inputs(graph, u)
    pf, qf = node_flows(graph, theta, v)
    out = np.empty_like(x)
    out[0::3] = w
    out[1::3] = (-graph.d * w + graph.p - pf + uw) / graph.m
    out[2::3] = (-graph.k * v + graph.q - qf + uv) / graph.tau
    return out


def rhs_reduced(graph, x_star, x_dev, u=None):
    """Pinned-reference dynamics in deviation coordinates."""
    x = from_deviation(graph, x_dev, x_star)
    return rhs_combined(graph, x, u)[StateLayout.of(graph).keep]


def rhs_isolated(graph, x_star, x_dev, u=None, fixed_flows=None):
    """Isolated (frozen-flow) dynamics in deviation coordinates.

    ``fixed_flows`` is a pair of per-node arrays ``(sum_j P_ij, sum_j Q_ij)``;
    by default the flows at the synchronous state are used, in which case
    the result equals ``A x~ + B u``.
    """
    lay = StateLayout.of(graph)
    x_dev = np.asarray(x_dev, float)
    if x_dev.shape != (lay.dim,):
        raise DimensionError(f"expected a deviation vector of length {lay.dim}, got {x_dev.shape}")
    if fixed_flows is None:
        fixed_flows = node_flows(graph, x_star.theta, x_star.v)
    pf, qf = (np.asarray(f, float) for f in fixed_flows)
    if pf.shape != (graph.n,) or qf.shape != (graph.n,):
        raise DimensionError(f"fixed flows must be two arrays of length {graph.n}")
    uw, uv = _inputs(graph, u)
    w = x_dev[lay.omega]
    v = x_star.v + x_dev[lay.v]
    out = np.empty(lay.dim)
    mask = lay.theta >= 0
    out[lay.theta[mask]] = w[mask]
    out[lay.omega] = (-graph.d * w + graph.p - pf + uw) / graph.m
    out[lay.v] = (-graph.k * v + graph.q - qf + uv) / graph.tau
    return out


# --------------------------------------------------------------------------
# state-space matrices
# --------------------------------------------------------------------------

@dataclass(eq=False)
class SystemMatrices:
    A: np.ndarray
    B: np.ndarray
    C_out: np.ndarray
    A_x: np.ndarray | None = None
    A_hat: np.ndarray | None = None
    reference_output: str = "fixed"

    @property
    def A_tilde(self):
        if self.A_x is None:
            return None
        return self.A + self.A_x + self.A_hat


def _per_node(value, n, name):
    arr = np.broadcast_to(np.asarray(value, float), (n,)).copy()
    if np.any(arr <= 0):
        raise ConfigError(f"output gain {name} must be positive")
    return arr


def node_blocks(graph, c_theta=1.0, c_v=1.0, c_omega_ref=1.0, reference_output="fixed"):
    """Per-node ``(A_i, B_i, C_i)`` blocks of the isolated system.

    The reference node keeps only its ``(omega, v)`` coordinates. With
    ``reference_output="fixed"`` its output block is
    ``diag(c_omega_ref, C_v)``, so the frequency mode is observed; with
    ``"paper"`` it is ``diag(0, C_v)``.
    """
    n = graph.n
    ct = _per_node(c_theta, n, "C_theta")
    cv = _per_node(c_v, n, "C_v")
    if reference_output not in ("fixed", "paper"):
        raise ConfigError("reference_output must be 'fixed' or 'paper'")
    if reference_output == "fixed" and not c_omega_ref > 0:
        raise ConfigError("output gain C_omega at the reference must be positive")
    blocks = []
    for i in range(n):
        m, d, tau, k = graph.m[i], graph.d[i], graph.tau[i], graph.k[i]
        if i == graph.reference:
            A = np.diag([-d / m, -k / tau])
            B = np.diag([1.0 / m, 1.0 / tau])
            cw = c_omega_ref if reference_output == "fixed" else 0.0
            C = np.diag([cw, cv[i]])
        else:
            A = np.array([[0.0, 1.0, 0.0], [0.0, -d / m, 0.0], [0.0, 0.0, -k / tau]])
            B = np.array([[0.0, 0.0], [1.0 / m, 0.0], [0.0, 1.0 / tau]])
            C = np.diag([ct[i], 0.0, cv[i]])
        blocks.append((A, B, C))
    return blocks


def _block_diag(mats):
    rows = sum(m.shape[0] for m in mats)
    cols = sum(m.shape[1] for m in mats)
    out = np.zeros((rows, cols))
    r = c = 0
    for m in mats:
        out[r:r + m.shape[0], c:c + m.shape[1]] = m
        r += m.shape[0]
        c += m.shape[1]
    return out


def build_isolated_matrices(graph, c_theta=1.0, c_v=1.0, c_omega_ref=1.0,
                            reference_output="fixed") -> SystemMatrices:
    """Block-diagonal ``A``, ``B`` and output ``C_out`` in deviation layout."""
    blocks = node_blocks(graph, c_theta, c_v, c_omega_ref, reference_output)
    A = _block_diag([b[0] for b in blocks])
    B = _block_diag([b[1] for b in blocks])
    C = _block_diag([b[2] for b in blocks])
    return SystemMatrices(A, B, C, reference_output=reference_output)


def build_linearized(graph, x_star, c_theta=1.0, c_v=1.0, c_omega_ref=1.0,
                     reference_output="fixed") -> SystemMatrices:
    """Add the coupling matrices ``A_x`` (local) and ``A_hat`` (neighbour).

    The block templates assume lossless lines; conductances, if any, are
    ignored here (the nonlinear right-hand side does include them).
    """
    sm = build_isolated_matrices(graph, c_theta, c_v, c_omega_ref, reference_output)
    if not graph.is_lossless:
        log.warning("build_linearized uses the lossless templates; conductances are ignored")
    n = graph.n
    th, v = x_star.theta, x_star.v
    m, tau = graph.m, graph.tau
    Ax = np.zeros((3 * n, 3 * n))
    Ah = np.zeros((3 * n, 3 * n))
    for a, b_, bb in zip(graph.line_from, graph.line_to, graph.line_b):
        for i, j in ((a, b_), (b_, a)):
            t = th[i] - th[j]
            c, s = np.cos(t), np.sin(t)
            wi, vi = 3 * i + 1, 3 * i + 2
            # local block of node i
            Ax[wi, 3 * i] -= bb * v[i] * v[j] * c / m[i]
            Ax[wi, vi] -= bb * v[j] * s / m[i]
            Ax[vi, 3 * i] -= bb * v[i] * v[j] * s / tau[i]
            Ax[vi, vi] += bb * v[j] * c / tau[i]
            # coupling block (i, j)
            Ah[wi, 3 * j] += bb * v[i] * v[j] * c / m[i]
            Ah[wi, 3 * j + 2] -= bb * v[i] * s / m[i]
            Ah[vi, 3 * j] += bb * v[i] * v[j] * s / tau[i]
            Ah[vi, 3 * j + 2] += bb * v[i] * c / tau[i]
    keep = StateLayout.of(graph).keep
    sm.A_x = Ax[np.ix_(keep, keep)]
    sm.A_hat = Ah[np.ix_(keep, keep)]
    return sm


# --------------------------------------------------------------------------
# integration
# --------------------------------------------------------------------------

@dataclass(eq=False)
class Trace:
    """Uniformly sampled trajectory.

    ``states`` has one row per sample; ``inputs`` (optional) has the input
    applied over the step starting at that sample, and ``lyapunov`` holds
    optional per-sample values of ``V``.
    """

    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray | None = None
    lyapunov: np.ndarray | None = None

    @property
    def final(self):
        return self.states[-1]

    def to_csv(self, path, node_ids=None):
        """Write ``t, node<id>_theta, ..., node<id>_u_v`` with 17 digits."""
        n = self.states.shape[1] // 3
        ids = range(n) if node_ids is None else node_ids
        header = ["t"]
        for i in ids:
            header += [f"node{i}_theta", f"node{i}_omega", f"node{i}_v"]
        inputs = self.inputs if self.inputs is not None else np.zeros((self.times.size, 2 * n))
        for i in ids:
            header += [f"node{i}_u_omega", f"node{i}_u_v"]
        data = np.column_stack([self.times, self.states, inputs])
        np.savetxt(path, data, delimiter=",", header=",".join(header), comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            header = next(csv.reader(fh))
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        n_state = sum("_u_" not in h for h in header[1:])
        return cls(data[:, 0], data[:, 1:1 + n_state], data[:, 1 + n_state:])


def integrate(rhs, x0, controller=None, dt=1e-3, T=20.0, mode="stage", callback=None):
    """Classical fixed-step fourth-order Runge-Kutta.

    Parameters
    ----------
    rhs : callable
        ``rhs(x, u) -> xdot``; ``u`` is ``None`` when there is no controller.
    x0 : array_like
    controller : callable, optional
        State feedback ``u = controller(x)``.
    dt, T : float
        Step and horizon; ``round(T / dt)`` steps are taken.
    mode : {"stage", "zoh"}
        Evaluate the controller inside every stage (continuous feedback)
        or once per step at its start (zero-order hold).
    callback : callable, optional
        ``callback(x)`` evaluated at every sample; its values are stored
        in ``Trace.lyapunov``.

    Returns
    -------
    Trace
    """
    if not dt > 0:
        raise ConfigError("dt must be positive")
    if not T >= dt:
        raise ConfigError("T must be at least dt")
    if mode not in ("stage", "zoh"):
        raise ConfigError("mode must be 'stage' or 'zoh'")
    steps = int(round(T / dt))
    x = np.array(x0, float)
    states = np.empty((steps + 1, x.size))
    states[0] = x
    inputs = None
    if controller is not None:
        u0 = np.asarray(controller(x), float)
        inputs = np.empty((steps + 1, u0.size))
    vals = None if callback is None else np.empty(steps + 1)

    def f(y, u_hold):
        if controller is None:
            return rhs(y, None)
        return rhs(y, u_hold if mode == "zoh" else controller(y))

    for s in range(steps):
        u = None if controller is None else np.asarray(controller(x), float)
        if inputs is not None:
            inputs[s] = u
        if vals is not None:
            vals[s] = callback(x)
        k1 = f(x, u)
        k2 = f(x + 0.5 * dt * k1, u)
        k3 = f(x + 0.5 * dt * k2, u)
        k4 = f(x + dt * k3, u)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise NumericalError(f"non-finite state at step {s + 1}", step=s + 1)
        states[s + 1] = x
    if inputs is not None:
        inputs[steps] = controller(x)
    if vals is not None:
        vals[steps] = callback(x)
    return Trace(dt * np.arange(steps + 1), states, inputs, vals)


def simulate(graph, x_star, x0_dev, F=None, dt=1e-3, T=20.0, model="pinned", mode="stage",
             lyapunov=False):
    """Simulate the nonlinear grid from ``x* + x0_dev``.

    ``F`` is a feedback gain acting on deviation vectors (``u = F x~``).
    The trace stores full states ``(theta, omega, v)`` per node. In the
    ``"full"`` model the reference angle drifts freely and feedback acts on
    the re-aligned deviation.
    """
    lay = StateLayout.of(graph)
    x0_dev = np.asarray(x0_dev, float)
    if x0_dev.shape != (lay.dim,):
        raise DimensionError(f"expected a deviation vector of length {lay.dim}")
    V = None
    if lyapunov:
        from .stability import lyapunov_value_abs

        def V(x):
            return lyapunov_value_abs(graph, x_star, x)

    if model == "full":
        def dev(x):
            return to_deviation(graph, align_reference_angle(graph, x, x_star), x_star)

        ctrl = None if F is None else (lambda x: F @ dev(x))
        return integrate(lambda x, u: rhs_combined(graph, x, u),
                         from_deviation(graph, x0_dev, x_star), ctrl, dt, T, mode, V)
    if model != "pinned":
        raise ConfigError("model must be 'pinned' or 'full'")
    ctrl = None if F is None else (lambda y: F @ y)
    cb = None if V is None else (lambda y: V(from_deviation(graph, y, x_star)))
    tr = integrate(lambda y, u: rhs_reduced(graph, x_star, y, u), x0_dev, ctrl, dt, T, mode, cb)
    full = np.tile(x_star.full(), (tr.times.size, 1))
    full[:, lay.keep] += tr.states
    return Trace(tr.times, full, tr.inputs, tr.lyapunov)


def simulate_linear(A_cl, x0, dt=1e-3, T=20.0):
    """Integrate ``x' = A_cl x`` with RK4."""
    A_cl = np.asarray(A_cl, float)
    return integrate(lambda x, u: A_cl @ x, x0, None, dt, T)
