"""Truncated values increase with the terminal penalty and converge to a singular limit.

For a factor-dependent spec (sinusoidal impact, mean-reverting factor,
one crossing mark with finite cost and one that never fills) we solve for
a schedule of penalties N, check that the surfaces increase with N, and
watch (T - t) u(t, 0) stay between the growth constants c0 and c1 as the
terminal time approaches.

    python demos/singular_limit.py
"""

import numpy as np

from singular_liquidation.pde import build_grid, check_growth, check_monotone_in_N, solve_singular
from singular_liquidation.riccati import growth_constants
from singular_liquidation.scenarios import y_dependent

spec = y_dependent()
T = spec.horizon
grid = build_grid(T, n_y=129, n_t=200)
sol = solve_singular(spec, grid, (1e2, 1e3, 1e4, 1e5))
print("convergence of the schedule:", {k: v for k, v in sol.to_dict().items() if k in ("gap", "cutoff")})

print(check_monotone_in_N(sol.surfaces, 1e-8).line())
print(check_growth(sol.surface, spec).line())

c0, c1 = growth_constants(spec)
mid = grid.axes[0].size // 2
print(f"\n(T - t) u(t, 0) with c0 = {c0:.4f}, c1 = {c1:.4f}")
print(f"{'t':>7}" + "".join(f"{'N=' + format(n, 'g'):>11}" for n in sol.surfaces) + f"{'limit':>11}")
for t in (0.0, 0.5, 0.9, 0.95, 0.98, T - grid.cutoff):
    i = int(np.argmin(np.abs(sol.surface.times - t)))
    ti = sol.surface.times[i]
    row = [s.values[int(np.argmin(np.abs(s.times - ti))), mid] * (T - ti) for s in sol.surfaces.values()]
    row.append(sol.surface.values[i, mid] * (T - ti))
    print(f"{ti:>7.3f}" + "".join(f"{v:>11.4f}" for v in row))
