"""Energy-type Lyapunov function, its derivatives and the certificate.

The Lyapunov function is

    V(x~) = sum_i 1/2 m_i w_i^2 + U(theta* + theta~, v* + v~) - U(theta*, v*)
    U(theta, v) = sum_i (-P_i theta_i + k_i v_i - Q_i log v_i)
                  - sum_lines b_ab v_a v_b cos(theta_a - theta_b)

with every line counted once. All functions here take deviation vectors in
the layout of :class:`~gridlevels.steady_state.StateLayout`.

``V`` is a difference of two nearly equal sums, so :func:`lyapunov_value`
evaluates it in a cancellation-free form: the first-order part is taken
from the analytic gradient at the equilibrium (zero up to the solver
residual) and the remainders are written with ``log1p`` and half-angle
identities.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError, RangeError
from .network import validate_static
from .steady_state import StateLayout, align_reference_angle, to_deviation

__all__ = [
    "HessianBlocks",
    "StabilityCertificate",
    "build_hessian_blocks",
    "lyapunov_value",
    "lyapunov_value_abs",
    "lyapunov_gradient",
    "lyapunov_hessian",
    "lyapunov_derivative",
    "estimate_lipschitz",
    "choose_radius",
    "region_constants",
    "check_certificate",
]

log = logging.getLogger(__name__)

PD_FLOOR = 1e-10


def _split(graph, x_star, x_dev):
    lay = StateLayout.of(graph)
    x_dev = np.asarray(x_dev, float)
    if x_dev.shape != (lay.dim,):
        raise DimensionError(f"expected a deviation vector of length {lay.dim}, got {x_dev.shape}")
    th = np.zeros(graph.n)
    mask = lay.theta >= 0
    th[mask] = x_dev[lay.theta[mask]]
    return lay, th, x_dev[lay.omega], x_dev[lay.v]


def _state(graph, x_star, x_dev):
    lay, th, w, dv = _split(graph, x_star, x_dev)
    v = x_star.v + dv
    if np.any(v <= 0):
        raise DomainError("voltage must stay positive inside the logarithm of V")
    return lay, th, w, dv, x_star.theta + th, v


# --------------------------------------------------------------------------
# gradient and Hessian at a general point
# --------------------------------------------------------------------------

def _grad_parts(graph, theta, v):
    """Per-node (dV/dtheta, dV/dv) at absolute angles/voltages."""
    a, b_, bb = graph.line_from, graph.line_to, graph.line_b
    t = theta[a] - theta[b_]
    s, c = np.sin(t), np.cos(t)
    n = graph.n
    ps = bb * v[a] * v[b_] * s
    gth = -graph.p + np.bincount(a, ps, n) - np.bincount(b_, ps, n)
    gv = (graph.k - graph.q / v
          - np.bincount(a, bb * v[b_] * c, n) - np.bincount(b_, bb * v[a] * c, n))
    return gth, gv


def _hess_parts(graph, theta, v):
    """Dense n x n blocks (V_tt, V_tv, V_vv) at absolute angles/voltages,
    reference rows still present."""
    n = graph.n
    a, b_, bb = graph.line_from, graph.line_to, graph.line_b
    t = theta[a] - theta[b_]
    s, c = np.sin(t), np.cos(t)
    tt = np.zeros((n, n))
    tv = np.zeros((n, n))
    vv = np.diag(graph.q / v**2)
    cc = bb * v[a] * v[b_] * c
    np.add.at(tt, (a, a), cc)
    np.add.at(tt, (b_, b_), cc)
    np.add.at(tt, (a, b_), -cc)
    np.add.at(tt, (b_, a), -cc)
    # d^2V / dtheta_i dv_j with theta_ij = theta_i - theta_j
    np.add.at(tv, (a, a), bb * v[b_] * s)
    np.add.at(tv, (b_, b_), -bb * v[a] * s)
    np.add.at(tv, (a, b_), bb * v[a] * s)
    np.add.at(tv, (b_, a), -bb * v[b_] * s)
    np.add.at(vv, (a, b_), -bb * c)
    np.add.at(vv, (b_, a), -bb * c)
    return tt, tv, vv


def lyapunov_gradient(graph, x_star, x_dev):
    """Analytic gradient of ``V`` with respect to the deviation vector."""
    lay, _, w, _, theta, v = _state(graph, x_star, x_dev)
    gth, gv = _grad_parts(graph, theta, v)
    out = np.empty(lay.dim)
    mask = lay.theta >= 0
    out[lay.theta[mask]] = gth[mask]
    out[lay.omega] = graph.m * w
    out[lay.v] = gv
    return out


def lyapunov_hessian(graph, x_star, x_dev=None):
    """Assembled Hessian of ``V`` in deviation layout (default at ``x~ = 0``)."""
    lay = StateLayout.of(graph)
    if x_dev is None:
        x_dev = np.zeros(lay.dim)
    _, _, _, _, theta, v = _state(graph, x_star, x_dev)
    tt, tv, vv = _hess_parts(graph, theta, v)
    return _assemble(lay, graph.m, tt, tv, vv)


def _assemble(lay, m, tt, tv, vv):
    H = np.zeros((lay.dim, lay.dim))
    keep = lay.theta >= 0
    it = lay.theta[keep]
    H[np.ix_(it, it)] = tt[np.ix_(keep, keep)]
    H[np.ix_(it, lay.v)] = tv[keep]
    H[np.ix_(lay.v, it)] = tv[keep].T
    H[np.ix_(lay.v, lay.v)] = vv
    H[lay.omega, lay.omega] = m
    return H


# --------------------------------------------------------------------------
# value and derivative
# --------------------------------------------------------------------------

def lyapunov_value(graph, x_star, x_dev) -> float:
    """Evaluate ``V(x~)`` for a deviation vector.

    Parameters
    ----------
    graph : NetworkGraph
    x_star : SynchronousState
    x_dev : ndarray, shape (3n - 1,)

    Returns
    -------
    float

    Raises
    ------
    DomainError
        If some ``v* + v~`` is not positive.
    """
    lay, th, w, dv, _, v = _state(graph, x_star, x_dev)
    vs, ts = x_star.v, x_star.theta
    val = 0.5 * np.sum(graph.m * w**2)

    # first-order part: gradient at the equilibrium (the solver residual)
    g0th, g0v = _grad_parts(graph, ts, vs)
    g0th[graph.reference] = 0.0
    val += g0th @ th + g0v @ dv

    # -Q log(v/v*) = -Q t + Q (t - log1p t)
    t = dv / vs
    val += np.sum(graph.q * (t - np.log1p(t)))

    a, b_, bb = graph.line_from, graph.line_to, graph.line_b
    if a.size:
        s0, c0 = np.sin(ts[a] - ts[b_]), np.cos(ts[a] - ts[b_])
        dlt = th[a] - th[b_]
        va, vb = v[a], v[b_]
        rem = (-2.0 * c0 * va * vb * np.sin(0.5 * dlt) ** 2
               - s0 * (va * vb * (np.sin(dlt) - dlt) + dlt * (dv[a] * vb + vs[a] * dv[b_]))
               + c0 * dv[a] * dv[b_])
        val -= np.sum(bb * rem)
    return float(val)


def lyapunov_value_abs(graph, x_star, x_abs) -> float:
    """``V`` at a full state of the free-reference model, after shifting the
    angles so the reference sits at its synchronous value."""
    x = align_reference_angle(graph, x_abs, x_star)
    return lyapunov_value(graph, x_star, to_deviation(graph, x, x_star))


def lyapunov_derivative(graph, x_star, x, xdot) -> float:
    """Closed-form time derivative ``-sum_i (d_i w_i^2 + tau_i/v_i vdot_i^2)``.

    ``x`` and ``xdot`` are full states ``(theta, omega, v)`` per node. The
    formula is exact for the open-loop free-reference dynamics.
    """
    x = np.asarray(x, float)
    xdot = np.asarray(xdot, float)
    if x.shape != (3 * graph.n,) or xdot.shape != x.shape:
        raise DimensionError(f"expected full states of length {3 * graph.n}")
    v = x[2::3]
    if np.any(v <= 0):
        raise DomainError("voltage must be positive")
    w, vdot = x[1::3], xdot[2::3]
    return float(-np.sum(graph.d * w**2 + graph.tau / v * vdot**2))


# --------------------------------------------------------------------------
# Hessian blocks and certificate
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class HessianBlocks:
    """Blocks of the Hessian of ``V`` at the synchronous state.

    Angle rows/columns run over the non-reference nodes in increasing id.
    """

    V_tt: np.ndarray
    V_vv: np.ndarray
    V_tv: np.ndarray
    V_ww: np.ndarray

    @property
    def G(self):
        return np.block([[self.V_tt, self.V_tv], [self.V_tv.T, self.V_vv]])


def build_hessian_blocks(graph, x_star) -> HessianBlocks:
    tt, tv, vv = _hess_parts(graph, x_star.theta, x_star.v)
    keep = np.arange(graph.n) != graph.reference
    return HessianBlocks(tt[np.ix_(keep, keep)], vv, tv[keep], np.diag(graph.m))


def _sym_extremes(M):
    if M.size == 0:
        return np.inf, -np.inf
    w = np.linalg.eigvalsh(M)
    return float(w[0]), float(w[-1])


def _hess_theta_v(graph, x_star, x_dev):
    """Hessian restricted to the (theta, v) coordinates; the omega block is
    constant and drops out of every Hessian difference."""
    _, _, _, _, theta, v = _state(graph, x_star, x_dev)
    tt, tv, vv = _hess_parts(graph, theta, v)
    keep = np.arange(graph.n) != graph.reference
    return np.block([[tt[np.ix_(keep, keep)], tv[keep]], [tv[keep].T, vv]])


def estimate_lipschitz(graph, x_star, r, n_samples=64, seed=0, safety=1.5) -> float:
    """Sampled Lipschitz constant of the Hessian of ``V`` on the ``r``-ball.

    Pairs ``(x, y)`` are drawn with uniformly random directions and radii
    ``r * U(0, 1)``; every second pair uses ``y = 0``. The largest ratio
    ``||H(x) - H(y)||_2 / ||x - y||`` is scaled by ``safety``.

    This is an estimate, not a bound.
    """
    if not r > 0:
        raise RangeError("radius must be positive")
    rng = np.random.default_rng(seed)
    dim = StateLayout.of(graph).dim
    H0 = _hess_theta_v(graph, x_star, np.zeros(dim))

    def draw():
        z = rng.standard_normal(dim)
        return z / np.linalg.norm(z) * r * rng.uniform()

    best = 0.0
    for k in range(n_samples):
        x = draw()
        y = np.zeros(dim) if k % 2 == 0 else draw()
        dist = np.linalg.norm(x - y)
        if dist == 0:
            continue
        Hy = H0 if k % 2 == 0 else _hess_theta_v(graph, x_star, y)
        diff = _hess_theta_v(graph, x_star, x) - Hy
        best = max(best, np.max(np.abs(np.linalg.eigvalsh(diff))) / dist)
    return float(safety * best)


def choose_radius(graph, x_star, lambda_min, *, fraction=0.5, n_samples=64, seed=0,
                  safety=1.5):
    """Pick ``r`` with ``0 < r < 3 lambda_min / L``.

    ``L`` is estimated on a trial ball of radius ``min(v*) / 2``; the
    returned radius is ``fraction * 3 lambda_min / L`` capped by the trial
    radius, so the estimate stays valid on the smaller ball.

    Returns
    -------
    r, L : float
    """
    if not lambda_min > 0:
        raise RangeError("the Hessian at the equilibrium is not positive definite")
    r0 = 0.5 * float(np.min(x_star.v))
    L = estimate_lipschitz(graph, x_star, r0, n_samples, seed, safety)
    r = r0 if L == 0 else min(r0, fraction * 3.0 * lambda_min / L)
    return r, L


def region_constants(lambda_min, lambda_max, L, r):
    """Quadratic sandwich constants on the ``r``-ball.

    Returns
    -------
    c1, c2 : float
        ``c1 = lambda_min/2 - L r/6`` and ``c2 = lambda_max/2 + L r/6``.
    delta : callable
        ``delta(eps) = sqrt(c1/c2) * min(eps, r)``.
    """
    if not (r > 0 and L >= 0 and r * L < 3.0 * lambda_min):
        raise RangeError(f"need 0 < r < 3 lambda_min / L (r={r}, L={L}, lambda_min={lambda_min})")
    c1 = 0.5 * lambda_min - L * r / 6.0
    c2 = 0.5 * lambda_max + L * r / 6.0
    ratio = np.sqrt(c1 / c2)

    def delta(eps):
        return float(ratio * min(eps, r))

    return c1, c2, delta


def _verdict(ok):
    return "pass" if ok else "fail"


@dataclass(eq=False)
class StabilityCertificate:
    C1: float
    C: float
    lambda_min_Vtt: float
    lambda_min_Vvv: float
    lambda_min_G: float
    gershgorin_Vvv: float
    lambda_min_hessian: float
    lambda_max_hessian: float
    L: float | None = None
    r: float | None = None
    c1: float | None = None
    c2: float | None = None
    verdicts: dict = field(default_factory=dict)

    @property
    def paper_sufficient(self) -> bool:
        return self.verdicts.get("paper_sufficient") == "pass"

    @property
    def direct(self) -> bool:
        return self.verdicts.get("direct") == "pass"

    def delta(self, eps):
        if self.c1 is None:
            raise RangeError("no stability region was computed")
        return float(np.sqrt(self.c1 / self.c2) * min(eps, self.r))

    def to_dict(self):
        out = {k: getattr(self, k) for k in (
            "C1", "C", "lambda_min_Vtt", "lambda_min_Vvv", "lambda_min_G", "gershgorin_Vvv",
            "lambda_min_hessian", "lambda_max_hessian", "L", "r", "c1", "c2")}
        out["L_is_estimate"] = True
        out["verdicts"] = dict(self.verdicts)
        return out

    @classmethod
    def from_dict(cls, data):
        kw = {k: data.get(k) for k in (
            "C1", "C", "lambda_min_Vtt", "lambda_min_Vvv", "lambda_min_G", "gershgorin_Vvv",
            "lambda_min_hessian", "lambda_max_hessian", "L", "r", "c1", "c2")}
        return cls(**kw, verdicts=dict(data.get("verdicts", {})))


def check_certificate(blocks: HessianBlocks, graph, x_star, *, lipschitz_samples=64,
                      seed=0, safety=1.5, fraction=0.5) -> StabilityCertificate:
    """Evaluate the sufficient stability conditions and a direct eigencheck.

    Two top-level verdicts are reported. ``paper_sufficient`` is the
    conjunction of the network, angle, parameter and ordering clauses with
    ``C > C1 > 0``. ``direct`` checks ``lambda_min(G) > 1e-10``.

    When the Hessian at the equilibrium is positive definite and
    ``lipschitz_samples > 0`` the radius ``r``, the estimate ``L`` and the
    constants ``c1``, ``c2`` are filled in as well.
    """
    rep = validate_static(graph)
    C1 = float(np.sum(blocks.V_tv**2))
    lt, _ = _sym_extremes(blocks.V_tt)
    lv, _ = _sym_extremes(blocks.V_vv)
    lg, _ = _sym_extremes(blocks.G)
    # Gershgorin-type row bound used for V_vv (cosines are positive here)
    a, b_, bb = graph.line_from, graph.line_to, graph.line_b
    cth = np.cos(x_star.theta[a] - x_star.theta[b_])
    rows = graph.q / x_star.v**2
    rows = rows - np.bincount(a, bb * cth, graph.n) - np.bincount(b_, bb * cth, graph.n)
    gersh = float(np.min(rows))
    lt_for_C = lt if np.isfinite(lt) else 0.0
    C = gersh * lt_for_C

    m_min, m_max = float(np.min(graph.m)), float(np.max(graph.m))
    hmin = min(lg, m_min)
    _, gmax = _sym_extremes(blocks.G)
    hmax = max(gmax, m_max)

    def clause(*names):
        st = [rep[nm].status for nm in names]
        return "fail" if "fail" in st else "pass"

    angles_ok = x_star.max_angle_difference(graph) < np.pi / 2
    params_ok = bool(np.all(graph.m > 0) and np.all(graph.d > 0) and np.all(graph.tau > 0)
                     and np.all(graph.k > 0) and np.all(x_star.v > 0))
    verdicts = {
        "network": clause("tree", "susceptance_positive", "lossless"),
        "angles": _verdict(angles_ok),
        "parameters": _verdict(params_ok),
        "ordering": rep["inertia_ordering"].status,
        "V_tt_positive_definite": _verdict(lt > PD_FLOOR),
        "V_vv_positive_definite": _verdict(lv > PD_FLOOR),
        "C_gt_C1_gt_0": _verdict(C > C1 > 0),
    }
    base = [verdicts[k] for k in ("network", "angles", "parameters", "ordering")]
    verdicts["paper_sufficient"] = _verdict(
        all(s != "fail" for s in base) and verdicts["C_gt_C1_gt_0"] == "pass")
    verdicts["direct"] = _verdict(lg > PD_FLOOR)

    cert = StabilityCertificate(C1, C, lt, lv, lg, gersh, hmin, hmax, verdicts=verdicts)
    if hmin > PD_FLOOR and lipschitz_samples > 0:
        r, L = choose_radius(graph, x_star, hmin, fraction=fraction,
                             n_samples=lipschitz_samples, seed=seed, safety=safety)
        c1, c2, _ = region_constants(hmin, hmax, L, r)
        cert.L, cert.r, cert.c1, cert.c2 = float(L), float(r), float(c1), float(c2)
        verdicts["region"] = "pass"
    else:
        verdicts["region"] = "skipped"
    log.info("certificate: C=%.4g C1=%.4g lambda_min(G)=%.4g", C, C1, lg)
    return cert
