"""Synchronous-state solver and deviation coordinates.

Full states are flat vectors of length ``3n`` laid out node by node as
``(theta_i, omega_i, v_i)``. Deviation vectors drop the reference angle and
have length ``3n - 1``; the remaining entries keep the same order, so the
reference node contributes ``(omega_g, v_g)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import AssumptionViolation, ConvergenceError, DimensionError
from .flows import flow_jacobians, node_flows

__all__ = [
    "SynchronousState",
    "StateLayout",
    "steady_residual",
    "solve_synchronous_state",
    "to_deviation",
    "from_deviation",
    "align_reference_angle",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StateLayout:
    """Index map between full states and deviation vectors."""

    n: int
    reference: int

    @classmethod
    def of(cls, graph):
        return cls(graph.n, graph.reference)

    @property
    def dim(self) -> int:
        return 3 * self.n - 1

    @property
    def keep(self):
        """Full-state indices retained in the deviation vector."""
        idx = np.arange(3 * self.n)
        return idx[idx != 3 * self.reference]

    @property
    def theta(self):
        """Deviation index of each node's angle, ``-1`` for the reference."""
        out = 3 * np.arange(self.n)
        out[self.reference + 1:] -= 1
        out[self.reference] = -1
        return out

    @property
    def omega(self):
        out = 3 * np.arange(self.n) + 1
        out[self.reference:] -= 1
        return out

    @property
    def v(self):
        out = 3 * np.arange(self.n) + 2
        out[self.reference:] -= 1
        return out

    @property
    def theta_nodes(self):
        """Nodes owning an angle slot, in deviation order."""
        return np.array([i for i in range(self.n) if i != self.reference], dtype=int)


@dataclass(frozen=True, eq=False)
class SynchronousState:
    theta: np.ndarray
    v: np.ndarray
    reference: int
    residual_norm: float = 0.0
    iterations: int = 0
    residual_history: tuple = field(default=())

    @property
    def omega(self):
        return np.zeros_like(self.v)

    def full(self):
        x = np.empty(3 * self.v.size)
        x[0::3], x[1::3], x[2::3] = self.theta, 0.0, self.v
        return x

    def max_angle_difference(self, graph) -> float:
        if graph.line_from.size == 0:
            return 0.0
        return float(np.max(np.abs(self.theta[graph.line_from] - self.theta[graph.line_to])))

    def to_dict(self, graph=None):
        out = {
            "theta": self.theta.tolist(),
            "v": self.v.tolist(),
            "reference": self.reference,
            "residual_norm": self.residual_norm,
            "iterations": self.iterations,
        }
        if graph is not None:
            out["max_abs_theta_ij"] = self.max_angle_difference(graph)
        return out

    @classmethod
    def from_dict(cls, data):
        return cls(np.asarray(data["theta"], float), np.asarray(data["v"], float),
                   int(data["reference"]), float(data.get("residual_norm", 0.0)),
                   int(data.get("iterations", 0)))


def _balances(graph, theta, v):
    pf, qf = node_flows(graph, theta, v)
    return pf - graph.p, qf - graph.q + graph.k * v


def steady_residual(graph, theta, v):
    """Stacked residual: active balance at every non-reference node followed
    by reactive balance at every node."""
    theta = np.asarray(theta, float)
    v = np.asarray(v, float)
    active, reactive = _balances(graph, theta, v)
    keep = np.arange(graph.n) != graph.reference
    return np.concatenate([active[keep], reactive])


def _residual_jacobian(graph, theta, v):
    dp_dth, dp_dv, dq_dth, dq_dv = flow_jacobians(graph, theta, v)
    dq_dv = dq_dv + np.diag(graph.k)
    keep = np.arange(graph.n) != graph.reference
    top = np.hstack([dp_dth[np.ix_(keep, keep)], dp_dv[keep]])
    bottom = np.hstack([dq_dth[:, keep], dq_dv])
    return np.vstack([top, bottom])


def solve_synchronous_state(graph, start=None, *, theta_ref=0.0, tol=1e-10,
                            max_iter=50, max_halvings=10, check_balance=True):
    """Newton iteration on :func:`steady_residual` with the reference angle
    pinned at ``theta_ref``.

    ``start`` is an optional ``(theta, v)`` pair; the default is the flat
    profile. A step that increases the residual is halved up to
    ``max_halvings`` times.
    """
    n, g = graph.n, graph.reference
    keep = np.arange(n) != g
    if start is None:
        theta = np.full(n, float(theta_ref))
        v = np.ones(n)
    else:
        theta = np.array(start[0], float)
        v = np.array(start[1], float)
        if theta.shape != (n,) or v.shape != (n,):
            raise DimensionError(f"start guess must have {n} angles and {n} voltages")
        theta[g] = theta_ref

    r = steady_residual(graph, theta, v)
    norm = np.max(np.abs(r), initial=0.0)
    history = [norm]
    it = 0
    while norm >= tol:
        if it >= max_iter:
            raise ConvergenceError(
                f"Newton did not converge in {max_iter} iterations (residual {norm:.3e})",
                residual=norm, iterations=it)
        try:
            step = np.linalg.solve(_residual_jacobian(graph, theta, v), -r)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(f"singular Newton Jacobian at iteration {it}",
                                   residual=norm, iterations=it) from exc
        lam = 1.0
        for _ in range(max_halvings + 1):
            th_new = theta.copy()
            th_new[keep] += lam * step[: n - 1]
            v_new = v + lam * step[n - 1:]
            if np.all(v_new > 0):
                r_new = steady_residual(graph, th_new, v_new)
                new_norm = np.max(np.abs(r_new))
                if np.isfinite(new_norm) and new_norm < norm:
                    break
            lam *= 0.5
        else:
            if not (np.all(v_new > 0) and np.isfinite(new_norm)):
                raise ConvergenceError(
                    f"no admissible Newton step at iteration {it} (residual {norm:.3e})",
                    residual=norm, iterations=it)
        theta, v, r, norm = th_new, v_new, r_new, new_norm
        it += 1
        history.append(norm)
    if len(history) >= 3:
        log.debug("Newton residual history: %s", ", ".join(f"{h:.2e}" for h in history[-3:]))

    state = SynchronousState(theta, v, g, float(norm), it, tuple(history))
    if np.any(v <= 0):
        raise AssumptionViolation("synchronous voltages must be positive")
    if state.max_angle_difference(graph) >= np.pi / 2:
        raise AssumptionViolation(
            f"synchronous angle difference {state.max_angle_difference(graph):.4f} >= pi/2")
    if check_balance:
        active, _ = _balances(graph, theta, v)
        scale = max(1.0, np.abs(graph.p).max(initial=0.0))
        if abs(active[g]) > 1e-8 * scale:
            raise AssumptionViolation(
                f"reference node active balance off by {active[g]:.3e}: injections do not balance")
    return state


def _check_full(graph, x):
    x = np.asarray(x, float)
    if x.shape != (3 * graph.n,):
        raise DimensionError(f"expected a full state of length {3 * graph.n}, got {x.shape}")
    return x


def to_deviation(graph, x_abs, x_star: SynchronousState):
    """Componentwise deviation with the reference-angle slot removed."""
    x = _check_full(graph, x_abs)
    keep = StateLayout.of(graph).keep
    return x[keep] - x_star.full()[keep]


def from_deviation(graph, x_dev, x_star: SynchronousState):
    """Inverse of :func:`to_deviation`; the reference angle is set to its
    synchronous value."""
    x_dev = np.asarray(x_dev, float)
    lay = StateLayout.of(graph)
    if x_dev.shape != (lay.dim,):
        raise DimensionError(f"expected a deviation vector of length {lay.dim}, got {x_dev.shape}")
    x = x_star.full()
    x[lay.keep] += x_dev
    return x


def align_reference_angle(graph, x_abs, x_star: SynchronousState):
    """Shift every angle so the reference sits at its synchronous value.

    The flows depend on angle differences only, so this is a symmetry of the
    dynamics; use it before :func:`to_deviation` on trajectories of the free
    model, where the reference angle drifts.
    """
    x = np.array(_check_full(graph, x_abs))
    g = graph.reference
    x[0::3] += x_star.theta[g] - x[3 * g]
    return x
