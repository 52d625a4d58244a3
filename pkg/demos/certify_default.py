"""Build the default three-level grid and certify its synchronous state.

Run with ``python3 demos/certify_default.py``.
"""

from gridlevels.network import build_multilevel, validate_static
from gridlevels.stability import build_hessian_blocks, check_certificate
from gridlevels.steady_state import solve_synchronous_state

g = build_multilevel()
print(f"{g.n} buses, {len(g.lines)} lines, reference bus {g.reference}")
print("static validation passed:", validate_static(g).passed)

s = solve_synchronous_state(g)
print(f"Newton: {s.iterations} iterations, residual {s.residual_norm:.1e}, "
      f"max |theta_ij| {s.max_angle_difference(g):.3f} rad, "
      f"v in [{s.v.min():.4f}, {s.v.max():.4f}]")

cert = check_certificate(build_hessian_blocks(g, s), g, s)
print(f"C = {cert.C:.4f} > C1 = {cert.C1:.4f}: {cert.verdicts['C_gt_C1_gt_0']}")
print(f"lambda_min(G) = {cert.lambda_min_G:.4f} (direct check: {cert.verdicts['direct']})")
print(f"Lipschitz estimate L = {cert.L:.1f}, radius r = {cert.r:.2e}")
print(f"c1 = {cert.c1:.3e}, c2 = {cert.c2:.3e}")

# any start closer than delta(eps) stays within eps of the equilibrium
for eps in (cert.r / 10, cert.r):
    print(f"eps = {eps:.2e} -> delta = {cert.delta(eps):.2e}")

print("verdicts:", {k: v for k, v in cert.verdicts.items()})
print(f"lambda_min(V_vv) = {cert.lambda_min_Vvv:.4f} >= Gershgorin bound "
      f"{cert.gershgorin_Vvv:.4f} = C / lambda_min(V_tt)")
