"""Distributed and centralized LQR synthesis and the performance bound.

The continuous algebraic Riccati equation

    0 = P A + A^T P + Q_xx - P B Q_uu^{-1} B^T P

is solved by Newton-Kleinman iteration: starting from a stabilizing gain
``F_0`` each step solves the closed-loop Lyapunov equation

    (A + B F_k)^T P_k + P_k (A + B F_k) + Q_xx + F_k^T Q_uu F_k = 0

and updates ``F_{k+1} = -Q_uu^{-1} B^T P_k``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .dynamics import build_linearized, node_blocks
from .errors import ConfigError, IterationError, StabilityError, StructureError

__all__ = [
    "LQRWeights",
    "RiccatiSolution",
    "PBHResult",
    "GainSet",
    "pbh_controllable",
    "pbh_observable",
    "check_controllability",
    "check_observability",
    "solve_lyapunov",
    "care_residual",
    "stabilizing_gain",
    "solve_care",
    "distributed_gains",
    "centralized_gain",
    "decay_margin",
    "evaluate_cost",
    "performance_bound",
    "proof_identity_error",
    "transient_factor",
    "synthesize",
]

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# weights
# --------------------------------------------------------------------------

@dataclass
class LQRWeights:
    """Output gains and input weights, per node or scalar.

    ``Q_xx = C_out^T C_out`` and ``Q_uu = diag(q_u_omega_i, q_u_v_i)``.
    """

    c_theta: float | np.ndarray = 1.0
    c_v: float | np.ndarray = 1.0
    c_omega_ref: float = 1.0
    q_u_omega: float | np.ndarray = 1.0
    q_u_v: float | np.ndarray = 1.0
    reference_output: str = "fixed"

    def input_weights(self, n):
        qw = np.broadcast_to(np.asarray(self.q_u_omega, float), (n,))
        qv = np.broadcast_to(np.asarray(self.q_u_v, float), (n,))
        if np.any(qw <= 0) or np.any(qv <= 0):
            raise ConfigError("input weights must be positive")
        return qw, qv

    def blocks(self, graph):
        """Per-node ``(A_i, B_i, Q_xx_i, Q_uu_i)``."""
        qw, qv = self.input_weights(graph.n)
        out = []
        for i, (A, B, C) in enumerate(node_blocks(graph, self.c_theta, self.c_v,
                                                  self.c_omega_ref, self.reference_output)):
            out.append((A, B, C.T @ C, np.diag([qw[i], qv[i]])))
        return out

    def matrices(self, graph):
        """Full ``(Q_xx, Q_uu)`` in deviation layout."""
        blocks = self.blocks(graph)
        Qxx = linalg.block_diag(*[b[2] for b in blocks])
        Quu = linalg.block_diag(*[b[3] for b in blocks])
        return Qxx, Quu

    def to_dict(self):
        def enc(x):
            return np.asarray(x).tolist()
        return {"c_theta": enc(self.c_theta), "c_v": enc(self.c_v),
                "c_omega_ref": self.c_omega_ref, "q_u_omega": enc(self.q_u_omega),
                "q_u_v": enc(self.q_u_v), "reference_output": self.reference_output}

    @classmethod
    def from_dict(cls, data):
        def dec(x):
            return np.asarray(x, float) if isinstance(x, list) else float(x)
        kw = {k: dec(v) for k, v in data.items() if k != "reference_output"}
        if "reference_output" in data:
            kw["reference_output"] = data["reference_output"]
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(f"unknown weight field: {exc}") from exc


# --------------------------------------------------------------------------
# PBH tests
# --------------------------------------------------------------------------

@dataclass
class PBHResult:
    passed: bool
    failing_eigenvalue: complex | None = None
    node: int | None = None


def _full_rank(M, rows):
    s = linalg.svdvals(M)
    tol = 1e-9 * max(1.0, s[0] if s.size else 0.0)
    return int(np.sum(s > tol)) == rows


def pbh_controllable(A, B, only_unstable=False) -> PBHResult:
    """``rank [A - lambda I, B] = n`` at every eigenvalue of ``A``.

    With ``only_unstable`` only eigenvalues with nonnegative real part are
    tested (stabilizability).
    """
    A = np.atleast_2d(np.asarray(A, float))
    B = np.asarray(B, float).reshape(A.shape[0], -1)
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if only_unstable and lam.real < 0:
            continue
        if not _full_rank(np.hstack([A - lam * np.eye(n), B]), n):
            return PBHResult(False, complex(lam))
    return PBHResult(True)


def pbh_observable(A, C, only_unstable=False) -> PBHResult:
    """Dual test: ``rank [A - lambda I; C] = n``."""
    A = np.atleast_2d(np.asarray(A, float))
    C = np.asarray(C, float).reshape(-1, A.shape[0])
    res = pbh_controllable(A.T, C.T, only_unstable)
    return res


def check_controllability(A_blocks, B_blocks):
    """Per-block PBH controllability; returns ``(all_passed, results)``."""
    results = []
    for i, (A, B) in enumerate(zip(A_blocks, B_blocks)):
        r = pbh_controllable(A, B)
        r.node = i
        results.append(r)
    return all(r.passed for r in results), results


def check_observability(A_blocks, C_blocks):
    results = []
    for i, (A, C) in enumerate(zip(A_blocks, C_blocks)):
        r = pbh_observable(A, C)
        r.node = i
        results.append(r)
    return all(r.passed for r in results), results


# --------------------------------------------------------------------------
# Lyapunov and Riccati
# --------------------------------------------------------------------------

def solve_lyapunov(A, Q):
    """Solve ``A^T X + X A + Q = 0`` (Bartels-Stewart via scipy)."""
    X = linalg.solve_continuous_lyapunov(np.asarray(A, float).T, -np.asarray(Q, float))
    return 0.5 * (X + X.T)


def care_residual(P, A, B, Q_xx, Q_uu):
    BtP = B.T @ P
    return P @ A + A.T @ P + Q_xx - BtP.T @ np.linalg.solve(Q_uu, BtP)


def _is_hurwitz(M):
    return bool(np.max(np.linalg.eigvals(M).real) < 0)


def stabilizing_gain(A, B):
    """A gain ``F`` with ``A + B F`` Hurwitz.

    Zero if ``A`` is already Hurwitz, otherwise Bass's construction:
    with ``alpha`` large enough that ``-(A + alpha I)`` is Hurwitz, solve
    ``(A + alpha I) Z + Z (A + alpha I)^T = 2 B B^T`` and take
    ``F = -B^T Z^{-1}``.
    """
    A = np.asarray(A, float)
    B = np.asarray(B, float)
    if _is_hurwitz(A):
        return np.zeros((B.shape[1], A.shape[0]))
    lam = np.linalg.eigvals(A)
    alpha = max(0.0, -lam.real.min()) + 1.0 + 0.1 * np.max(np.abs(lam))
    As = A + alpha * np.eye(A.shape[0])
    Z = linalg.solve_continuous_lyapunov(As, 2.0 * B @ B.T)
    try:
        F = -B.T @ np.linalg.inv(Z)
    except np.linalg.LinAlgError as exc:
        raise StructureError("no stabilizing initial gain: (A, B) is not controllable") from exc
    if not _is_hurwitz(A + B @ F):
        raise StructureError("Bass construction did not return a stabilizing gain")
    return F


@dataclass(eq=False)
class RiccatiSolution:
    P: np.ndarray
    F: np.ndarray
    residual_norm: float
    stabilizing: bool
    iterations: int
    residual_history: tuple = field(default=())


def _sqrt_psd(Q):
    w, U = np.linalg.eigh(0.5 * (Q + Q.T))
    return (U * np.sqrt(np.clip(w, 0.0, None))) @ U.T


def solve_care(A, B, Q_xx, Q_uu, F0=None, tol=1e-10, max_iter=100) -> RiccatiSolution:
    """Stabilizing solution of the continuous algebraic Riccati equation.

    Parameters
    ----------
    A, B, Q_xx, Q_uu : array_like
        ``Q_xx`` symmetric PSD, ``Q_uu`` symmetric PD.
    F0 : ndarray, optional
        Stabilizing initial gain; computed by :func:`stabilizing_gain`
        when omitted.
    tol : float
        Stop when ``||residual||_F <= tol * (1 + ||P||_F)``.

    Returns
    -------
    RiccatiSolution

    Raises
    ------
    StructureError
        ``(A, B)`` not stabilizable or ``(A, Q_xx^{1/2})`` not detectable.
    IterationError
        No convergence within ``max_iter`` Newton steps.
    """
    A = np.atleast_2d(np.asarray(A, float))
    n = A.shape[0]
    B = np.asarray(B, float).reshape(n, -1)
    Q_xx = np.atleast_2d(np.asarray(Q_xx, float))
    Q_uu = np.atleast_2d(np.asarray(Q_uu, float))
    if not pbh_controllable(A, B, only_unstable=True).passed:
        raise StructureError("(A, B) is not stabilizable")
    if not pbh_observable(A, _sqrt_psd(Q_xx), only_unstable=True).passed:
        raise StructureError("(A, Q_xx^1/2) is not detectable")

    F = stabilizing_gain(A, B) if F0 is None else np.asarray(F0, float)
    if not _is_hurwitz(A + B @ F):
        raise StructureError("initial gain is not stabilizing")
    history = []
    for it in range(1, max_iter + 1):
        Acl = A + B @ F
        P = solve_lyapunov(Acl, Q_xx + F.T @ Q_uu @ F)
        F = -np.linalg.solve(Q_uu, B.T @ P)
        res = np.linalg.norm(care_residual(P, A, B, Q_xx, Q_uu))
        history.append(res)
        if res <= tol * (1.0 + np.linalg.norm(P)):
            # one more Newton step is nearly free and, by quadratic
            # convergence, takes the residual down to rounding level
            P2 = solve_lyapunov(A + B @ F, Q_xx + F.T @ Q_uu @ F)
            res2 = np.linalg.norm(care_residual(P2, A, B, Q_xx, Q_uu))
            if res2 < res:
                P, F, res = P2, -np.linalg.solve(Q_uu, B.T @ P2), res2
                history.append(res)
            stab = _is_hurwitz(A + B @ F)
            return RiccatiSolution(P, F, float(res), stab, it, tuple(history))
    raise IterationError(f"Newton-Kleinman did not converge in {max_iter} steps "
                         f"(residual {history[-1]:.3e})")


# --------------------------------------------------------------------------
# gains, costs and bound
# --------------------------------------------------------------------------

def distributed_gains(graph, weights: LQRWeights | None = None):
    """Per-node LQR gains assembled block-diagonally.

    Returns
    -------
    F_d : ndarray, shape (2n, 3n - 1)
    solutions : list of RiccatiSolution
        One per node, in id order.
    """
    weights = LQRWeights() if weights is None else weights
    sols, gains = [], []
    for i, (A, B, Qxx, Quu) in enumerate(weights.blocks(graph)):
        try:
            sol = solve_care(A, B, Qxx, Quu)
        except (StructureError, IterationError) as exc:
            raise type(exc)(f"node {i}: {exc}") from exc
        sols.append(sol)
        gains.append(sol.F)
    return linalg.block_diag(*gains), sols


def centralized_gain(A_tilde, B, Q_xx, Q_uu, F0=None):
    """Full-size LQR gain ``F_c = -Q_uu^{-1} B^T Q~``.

    ``F0`` seeds the Newton-Kleinman iteration; the block-diagonal
    distributed gain is a natural choice when it stabilizes ``A_tilde``.
    """
    if F0 is not None and not _is_hurwitz(A_tilde + B @ F0):
        log.info("seed gain does not stabilize A_tilde; falling back to Bass's construction")
        F0 = None
    sol = solve_care(A_tilde, B, Q_xx, Q_uu, F0=F0)
    return sol.F, sol


def decay_margin(A_cl) -> float:
    """``beta = -2 max Re lambda(A_cl)``; positive iff ``A_cl`` is Hurwitz."""
    return float(-2.0 * np.max(np.linalg.eigvals(np.atleast_2d(A_cl)).real))


def cost_matrix(A_cl, Q_eff):
    A_cl = np.atleast_2d(np.asarray(A_cl, float))
    if not _is_hurwitz(A_cl):
        raise StabilityError("closed-loop matrix is not Hurwitz; the cost is infinite")
    return solve_lyapunov(A_cl, np.atleast_2d(Q_eff))


def evaluate_cost(A_cl, Q_eff, x0) -> float:
    """Infinite-horizon cost ``x0^T P x0`` with ``A_cl^T P + P A_cl + Q_eff = 0``."""
    x0 = np.atleast_1d(np.asarray(x0, float))
    return float(x0 @ cost_matrix(A_cl, Q_eff) @ x0)


@dataclass
class BoundResult:
    bound: float
    J_d: float
    J_c: float
    holds: bool

    @property
    def gap(self):
        return self.J_d - self.J_c


def performance_bound(F_d, F_c, Q_uu, beta, x0, *, A_tilde, B, Q_xx, P_c, slack=1e-9):
    """Bound ``||(F_d - F_c)^T Q_uu (F_d - F_c)||_2 / beta * ||x0||^2`` on the
    cost gap, together with both costs on the coupled system."""
    if not beta > 0:
        raise StabilityError(f"decay margin beta = {beta:.3e} is not positive")
    D = F_d - F_c
    M = D.T @ Q_uu @ D
    norm = float(linalg.svdvals(M)[0]) if M.size else 0.0
    x0 = np.asarray(x0, float)
    bound = norm / beta * float(x0 @ x0)
    J_d = evaluate_cost(A_tilde + B @ F_d, Q_xx + F_d.T @ Q_uu @ F_d, x0)
    J_c = float(x0 @ P_c @ x0)
    gap = J_d - J_c
    return BoundResult(bound, J_d, J_c, bool(-slack <= gap <= bound + slack))


def proof_identity_error(A_tilde, B, F_d, F_c, P_c, Q_xx, Q_uu):
    """Largest entrywise relative error of
    ``Q_xx + F_d^T Q_uu F_d = -P_c A_d - A_d^T P_c + D^T Q_uu D``."""
    Ad = A_tilde + B @ F_d
    D = F_d - F_c
    lhs = Q_xx + F_d.T @ Q_uu @ F_d
    rhs = -P_c @ Ad - Ad.T @ P_c + D.T @ Q_uu @ D
    scale = max(np.max(np.abs(lhs)), np.max(np.abs(rhs)), 1e-300)
    return float(np.max(np.abs(lhs - rhs)) / scale)


def transient_factor(A_cl, beta=None, times=None):
    """``kappa = max_t ||exp(A_cl t)||_2^2 exp(beta t)`` over sample times.

    The exponential bound with constant one holds for normal matrices
    only; ``kappa`` measures how far the closed loop is from that.
    """
    beta = decay_margin(A_cl) if beta is None else beta
    if times is None:
        times = np.linspace(0.0, 10.0 / max(beta, 1e-3), 17)
    return float(max(linalg.svdvals(linalg.expm(A_cl * t))[0] ** 2 * np.exp(beta * t)
                     for t in times))


def _spectrum_pairs(M):
    lam = np.linalg.eigvals(M)
    lam = lam[np.lexsort((lam.imag, lam.real))]
    return [[float(z.real), float(z.imag)] for z in lam]


@dataclass(eq=False)
class GainSet:
    F_d: np.ndarray
    F_c: np.ndarray
    P_c: np.ndarray
    beta_d: float
    beta_c: float
    J_d: float
    J_c: float
    J_d_isolated_sum: float
    bound: float
    holds: bool
    kappa: float
    identity_error: float
    care_residual: float
    spectrum_d: list = field(default_factory=list)
    spectrum_c: list = field(default_factory=list)
    block_gains: list = field(default_factory=list)

    def to_dict(self):
        return {
            "beta_d": self.beta_d, "beta_c": self.beta_c,
            "J_d_coupled": self.J_d, "J_d_isolated_sum": self.J_d_isolated_sum,
            "J_c": self.J_c, "bound": self.bound, "holds": self.holds,
            "kappa": self.kappa, "identity_error": self.identity_error,
            "care_residual_relative": self.care_residual,
            "spectrum_distributed": self.spectrum_d, "spectrum_centralized": self.spectrum_c,
            "block_gains": self.block_gains,
        }


def synthesize(graph, x_star, x0, weights: LQRWeights | None = None, sm=None) -> GainSet:
    """Distributed and centralized gains, costs from ``x0`` and the bound.

    Raises
    ------
    StabilityError
        If the distributed gain does not stabilize the coupled system.
    """
    weights = LQRWeights() if weights is None else weights
    if sm is None:
        sm = build_linearized(graph, x_star, weights.c_theta, weights.c_v,
                              weights.c_omega_ref, weights.reference_output)
    Qxx, Quu = weights.matrices(graph)
    At, B = sm.A_tilde, sm.B
    F_d, sols = distributed_gains(graph, weights)
    Ad = At + B @ F_d
    beta_d = decay_margin(Ad)
    if beta_d <= 0:
        raise StabilityError(f"distributed gain does not stabilize the coupled system "
                             f"(beta_d = {beta_d:.3e})")
    F_c, sol = centralized_gain(At, B, Qxx, Quu, F0=F_d)
    Ac = At + B @ F_c
    beta_c = decay_margin(Ac)
    x0 = np.asarray(x0, float)
    res = performance_bound(F_d, F_c, Quu, beta_d, x0, A_tilde=At, B=B, Q_xx=Qxx, P_c=sol.P)

    # sum of isolated block costs, sliced per node from the deviation layout
    iso, pos = 0.0, 0
    for s_i in sols:
        k = s_i.P.shape[0]
        xi = x0[pos:pos + k]
        iso += float(xi @ s_i.P @ xi)
        pos += k
    rel = sol.residual_norm / (1.0 + np.linalg.norm(sol.P))
    return GainSet(
        F_d=F_d, F_c=F_c, P_c=sol.P, beta_d=beta_d, beta_c=beta_c,
        J_d=res.J_d, J_c=res.J_c, J_d_isolated_sum=iso, bound=res.bound, holds=res.holds,
        kappa=transient_factor(Ad, beta_d),
        identity_error=proof_identity_error(At, B, F_d, F_c, sol.P, Qxx, Quu),
        care_residual=float(rel),
        spectrum_d=_spectrum_pairs(Ad), spectrum_c=_spectrum_pairs(Ac),
        block_gains=[s_i.F.tolist() for s_i in sols],
    )
