"""Complex-scaled bridge Monte Carlo converging to the Mehler kernel.

The standard error shrinks like n^(-1/2) while the half-resolution bias
estimate stays well below it at 256 time steps.
"""

# %%
from wnpath.closedform import PropagatorQuery, t_harmonic
from wnpath.dossmc import AnalyticPotential, doss_propagator

q = PropagatorQuery(0.3, -0.4, 0.0, 0.5)
exact = t_harmonic(PropagatorQuery(0.3, -0.4, 0.0, 0.5, k=1.0))
V = AnalyticPotential.harmonic(1.0)

# %%
for n_paths in (10_000, 100_000, 1_000_000):
    est = doss_propagator(q, V, n_paths=n_paths, n_steps=256, seed=2024)
    dev = abs(est.value - exact)
    print(f"{n_paths:8d} paths  |MC - exact| {dev:.2e}  stderr {est.stderr:.2e}  bias {abs(est.bias):.2e}")
