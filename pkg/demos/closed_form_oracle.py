"""Finite-difference surfaces against the explicit Riccati solutions.

Two homogeneous cost families have closed-form value functions: always
filling crossing orders with no risk aversion (the lower family), and
risk aversion equal to impact with a network that never fills (the upper
family, whose limit is Lambda coth(T - t)). The solver knows nothing about
either; matching them to four digits checks reaction, transport and the
graded time mesh together.

    python demos/closed_form_oracle.py
"""

import time

import numpy as np

from singular_liquidation.pde import build_grid, solve_truncated
from singular_liquidation.riccati import closed_form_lower, closed_form_upper, coth_solution
from singular_liquidation.scenarios import lower_family, upper_family

T = 1.0
grid = build_grid(T, n_y=129, n_t=200)
print(f"grid: {grid.times.size} time knots (graded toward T), {grid.axes[0].size} space nodes\n")

print(f"{'family':<8} {'N':>8} {'max rel err':>12} {'u(0)':>10} {'exact':>10} {'seconds':>8}")
for name, spec, exact in [
    ("lower", lower_family(), lambda N, t: closed_form_lower(1.0, 1.0, N, t, T)),
    ("upper", upper_family(), lambda N, t: closed_form_upper(1.0, N, t, T)),
]:
    for N in (10.0, 100.0, 1000.0, 1e4):
        t0 = time.perf_counter()
        s = solve_truncated(spec, grid, N)
        dt = time.perf_counter() - t0
        keep = s.times <= T - 0.01
        ref = exact(N, s.times[keep])[:, None]
        err = np.max(np.abs(s.values[keep] - ref) / ref)
        print(f"{name:<8} {N:>8g} {err:>12.2e} {s.values[0, 64]:>10.6f} {ref[0, 0]:>10.6f} {dt:>8.2f}")

# As N grows the upper family approaches Lambda coth(T - t), which blows up at T.
s = solve_truncated(upper_family(), grid, 1e4)
print("\nupper family, N = 1e4, against Lambda coth(T - t):")
for t in (0.0, 0.5, 0.9, 0.95):
    i = int(np.argmin(np.abs(s.times - t)))
    print(f"  t={s.times[i]:.3f}  u={s.values[i, 64]:.5f}  coth={coth_solution(1.0, s.times[i], T):.5f}")
