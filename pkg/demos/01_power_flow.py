"""Solve a bundled case and check the current/power identities on the result.

    python demos/01_power_flow.py [case14]
"""
import sys

import numpy as np

from gatpf.baselines import TpbnnModel, tpbnn_forward
from gatpf.case import build_ybus, load_bundled
from gatpf.powerflow import compute_injections, conjugate_currents, recover_power, solve_nr

name = sys.argv[1] if len(sys.argv) > 1 else "case14"
case = load_bundled(name)
Y = build_ybus(case)
print(f"{name}: {case.n_bus} buses, {len(case.active_branches())} branches, Y has {Y.matrix.nnz} stored entries")

sol = solve_nr(case)
print(f"Newton-Raphson: {sol.iterations} iterations, final mismatch {sol.max_mismatch:.2e}")
for it, err in sol.trace:
    print(f"  iter {it}: {err:.3e}")

# the two-step route (currents first, then power) lands on the same injections
ir, ii = conjugate_currents(Y, sol.mu, sol.omega)
p2, q2 = recover_power(sol.mu, sol.omega, ir, ii)
print("max |P - P(currents)| =", np.abs(sol.p - p2).max())
print("max |Q - Q(currents)| =", np.abs(sol.q - q2).max())

# the injections are bilinear in [mu | omega], so a pruned bilinear model can hold them exactly
tp = TpbnnModel.from_admittance(Y, case.edge_list())
p3, q3 = tpbnn_forward(tp, sol.mu, sol.omega)
print(f"bilinear model with {tp.coef_p.size} coefficients per quantity, max error",
      max(np.abs(p3 - sol.p).max(), np.abs(q3 - sol.q).max()))

vm = np.abs(sol.voltage)
print("bus  |V|     angle(deg)  P      Q")
for k in range(case.n_bus):
    print(f"{case.buses[k].id:3d}  {vm[k]:.4f}  {np.degrees(np.angle(sol.voltage[k])):9.3f}  "
          f"{sol.p[k]:+.3f}  {sol.q[k]:+.3f}")
