"""
Small-data forward evolution of the coupled system and its decay.

Evolves bump data of size eps, then prints the windowed envelope of
rho^{3/2} sup |phi| on hyperboloids and t sup |u| on time slices.  The
first stays flat and the second stays bounded, the sharp decay of each
component.

    python3 demos/forward_decay.py [eps]
"""
import sys

import numpy as np

from wkg.diagnostics import fit_rate, time_weighted_sup, weighted_sup_envelope
from wkg.evolve import GridSpec, make_initial_data, solve_forward


def main(eps=0.01):
    grid = GridSpec(r_max=310.0, n_r=3100, t_end=300.0)
    u, phi = solve_forward(grid, make_initial_data(eps, seed=0))

    rhos = np.array([8.0, 16.0, 32.0, 64.0])
    env = weighted_sup_envelope(phi, rhos)
    print("rho    rho^1.5 sup|phi| / eps")
    for r, e in zip(rhos, env):
        print(f"{r:5.0f}  {e / eps:.4f}")
    print(f"slope {fit_rate(rhos, env).exponent:+.3f}")

    t, v = time_weighted_sup(u, grid.t_end / 16)
    sel = np.geomspace(t[0], t[-1], 6)
    idx = np.searchsorted(t, sel).clip(0, len(t) - 1)
    print("\nt      t sup|u| / eps")
    for k in idx:
        print(f"{t[k]:5.0f}  {v[k] / eps:.4f}")
    print(f"slope {fit_rate(t[idx], v[idx]).exponent:+.3f}")


if __name__ == "__main__":
    main(float(sys.argv[1]) if len(sys.argv) > 1 else 0.01)
