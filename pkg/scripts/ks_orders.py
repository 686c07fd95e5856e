"""Order-by-order look at the time-ordered series for a smeared potential.

Each term is compared with its a priori bound, and the summed series is
checked against the exact delta-potential kernel for a single atom.
"""

# %%
from wnpath.closedform import PropagatorQuery
from wnpath.dyson import SpaceTimeMeasure, ks_bound, ks_order_n, ks_propagator

q = PropagatorQuery(0.3, -0.5, 0.0, 1.0)
v = SpaceTimeMeasure.gaussian(0.2, 0.5, 0.2)
cv = v.c_v(0.0, 1.0)

# %%
print(" n        |K_n|          M_n")
for n in range(7):
    print(f"{n:2d}  {abs(ks_order_n(q, v, n, tol=1e-9)):.6e}  {ks_bound(n, cv, 1.0):.6e}")

# %%
rep = ks_propagator(q, SpaceTimeMeasure.point_atom(0.1, 0.2), tol=1e-7)
print(f"single atom: K = {rep.total:.12f}, orders {rep.orders}, error budget {rep.error:.1e}")
