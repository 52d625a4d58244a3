"""Two-bus examples for the two verdict tiers and the reference output.

The flat toy is stable by a direct eigenvalue check, yet fails the
sufficient condition C > C1 > 0 because C1 = 0 there. The loaded toy
fails both.
"""

import numpy as np

from gridlevels.control import pbh_observable
from gridlevels.dynamics import node_blocks
from gridlevels.network import LineParams, NetworkGraph, NodeParams
from gridlevels.stability import build_hessian_blocks, check_certificate
from gridlevels.steady_state import solve_synchronous_state


def two_bus(b, k, p2, q):
    nodes = [NodeParams.with_injections(0, 1.0, 1.0, 1.0, k, p=-p2, q=q),
             NodeParams.with_injections(1, 1.0, 1.0, 1.0, k, p=p2, q=q)]
    return NetworkGraph(nodes, [LineParams(0, 1, b)], reference=0)


for label, g in (("flat", two_bus(0.1, 1.0, 0.0, 0.9)),
                 ("loaded", two_bus(1.0, 1.0, 0.5, 1 - np.cos(np.pi / 6)))):
    s = solve_synchronous_state(g)
    hb = build_hessian_blocks(g, s)
    cert = check_certificate(hb, g, s)
    print(f"{label}: theta_21 = {s.theta[1] - s.theta[0]:.4f}, V_vv =\n{hb.V_vv.round(4)}")
    print(f"  C = {cert.C:.3f}, C1 = {cert.C1:.3f}, lambda_min(G) = {cert.lambda_min_G:.3f}")
    print(f"  sufficient: {cert.verdicts['paper_sufficient']}, direct: {cert.verdicts['direct']}")

# with no frequency output at the reference bus its damping mode is hidden
g = two_bus(0.1, 1.0, 0.0, 0.9)
for mode in ("paper", "fixed"):
    A, _, C = node_blocks(g, reference_output=mode)[g.reference]
    res = pbh_observable(A, C)
    print(f"reference output {mode!r}: observable {res.passed}"
          + ("" if res.passed else f" (fails at lambda = {res.failing_eigenvalue.real:.2f})"))
