"""Line power-flow sums and their derivatives.

For a line (a, b) with angle difference ``t = theta_a - theta_b``::

    P_ab = v_a v_b (g cos t + b sin t)      Q_ab = v_a v_b (g sin t - b cos t)

and the reverse direction is obtained with ``t -> -t``.
"""

import numpy as np


def node_flows(graph, theta, v):
    """Per-node sums ``(sum_j P_ij, sum_j Q_ij)`` over incident lines."""
    a, b_ = graph.line_from, graph.line_to
    n = graph.n
    if a.size == 0:
        return np.zeros(n), np.zeros(n)
    t = theta[a] - theta[b_]
    c, s = np.cos(t), np.sin(t)
    vv = v[a] * v[b_]
    bb, gg = graph.line_b, graph.line_g
    p_ab = vv * (gg * c + bb * s)
    p_ba = vv * (gg * c - bb * s)
    q_ab = vv * (gg * s - bb * c)
    q_ba = vv * (-gg * s - bb * c)
    pf = np.bincount(a, p_ab, n) + np.bincount(b_, p_ba, n)
    qf = np.bincount(a, q_ab, n) + np.bincount(b_, q_ba, n)
    return pf, qf


def flow_jacobians(graph, theta, v):
    """Dense ``(dP/dtheta, dP/dv, dQ/dtheta, dQ/dv)`` of the node sums."""
    n = graph.n
    dp_dth, dp_dv = np.zeros((n, n)), np.zeros((n, n))
    dq_dth, dq_dv = np.zeros((n, n)), np.zeros((n, n))
    if graph.line_from.size == 0:
        return dp_dth, dp_dv, dq_dth, dq_dv
    for a, b_, bb, gg in zip(graph.line_from, graph.line_to, graph.line_b, graph.line_g):
        for i, j in ((a, b_), (b_, a)):
            t = theta[i] - theta[j]
            c, s = np.cos(t), np.sin(t)
            vi, vj = v[i], v[j]
            # P_ij = vi vj (g c + b s); Q_ij = vi vj (g s - b c)
            dp_t = vi * vj * (-gg * s + bb * c)
            dq_t = vi * vj * (gg * c + bb * s)
            dp_dth[i, i] += dp_t
            dp_dth[i, j] -= dp_t
            dq_dth[i, i] += dq_t
            dq_dth[i, j] -= dq_t
            p0 = gg * c + bb * s
            q0 = gg * s - bb * c
            dp_dv[i, i] += vj * p0
            dp_dv[i, j] += vi * p0
            dq_dv[i, i] += vj * q0
            dq_dv[i, j] += vi * q0
    return dp_dth, dp_dv, dq_dth, dq_dv
