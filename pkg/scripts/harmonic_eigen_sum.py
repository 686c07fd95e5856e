"""Mehler kernel against truncated Hermite-function sums.

At real time the pointwise eigen sum converges slowly; pushing the time
slightly into the lower half plane makes the convergence geometric.
"""

# %%
import numpy as np

from wnpath.closedform import PropagatorQuery, t_harmonic


def hermite_functions(n_terms, x):
    """Normalized Hermite functions psi_0..psi_{n-1} at ``x`` by recurrence."""
    out = np.empty(n_terms)
    out[0] = np.pi ** -0.25 * np.exp(-x * x / 2)
    if n_terms > 1:
        out[1] = np.sqrt(2.0) * x * out[0]
    for n in range(2, n_terms):
        out[n] = np.sqrt(2.0 / n) * x * out[n - 1] - np.sqrt((n - 1) / n) * out[n - 2]
    return out


def eigen_sum(x, x0, T, n_terms):
    # k = 1, energies n + 1/2
    n = np.arange(n_terms)
    return np.sum(np.exp(-1j * (n + 0.5) * T) * hermite_functions(n_terms, x) * hermite_functions(n_terms, x0))


# %%
x, x0 = 1.1, -1.7
for T in (1.0, 1.0 - 0.5j):
    exact = t_harmonic(PropagatorQuery(x0, x, 0.0, T, k=1.0))
    print(f"T = {T}")
    for n_terms in (10, 20, 40, 80, 160):
        err = abs(eigen_sum(x, x0, T, n_terms) - exact) / abs(exact)
        print(f"  {n_terms:4d} terms  rel err {err:.2e}")
