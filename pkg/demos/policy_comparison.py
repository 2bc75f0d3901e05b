"""Monte Carlo: the feedback policy read from the value surface against simple competitors.

With common random numbers, the feedback strategy should cost no more than
TWAP, a slowed or hurried copy of itself, or itself with the crossing
network switched off. Its mean cost should also reproduce u(0, y0) x0^2.
Finally the singular-limit policy liquidates essentially the whole position
before the cutoff.

    python demos/policy_comparison.py
"""

from singular_liquidation.control import FeedbackPolicy
from singular_liquidation.mc import check_liquidation, compare_policies, value_identity
from singular_liquidation.pde import build_grid, solve_singular, solve_truncated
from singular_liquidation.scenarios import y_dependent

spec = y_dependent()
grid = build_grid(spec.horizon, n_y=129, n_t=200)
surf = solve_truncated(spec, grid, 100.0)

rep = value_identity(spec, surf, solve_truncated(spec, grid.refined(), 100.0), 1.0, 0.0, 10_000, seed=7)
d = rep.details
print(f"value identity: MC {d['mc']['mean']:.5f} +- {d['mc']['stderr']:.5f}, PDE {d['pde']:.5f}, "
      f"budget {d['budget']:.2e} -> {'PASS' if rep.passed else 'FAIL'}")

table = compare_policies(spec, surf, 1.0, 0.0, 10_000, delta=0.2, seed=11)
print(f"\n{'policy':<16} {'mean cost':>10} {'paired diff':>12} {'stderr':>9}")
print(f"{'feedback':<16} {table.reference.mean:>10.5f}")
for r in table.rows:
    print(f"{r.policy:<16} {r.estimate.mean:>10.5f} {r.diff_mean:>12.5f} {r.diff_stderr:>9.5f}")

lim = solve_singular(spec, grid, (1e2, 1e3, 1e4, 1e5)).surface
liq = check_liquidation(spec, FeedbackPolicy(lim, spec), 1.0, 0.0, 1000, grid.cutoff, tol=0.05, seed=3)
print(f"\nliquidation: 99th percentile of x(T - eps)/x0 = {liq.observed:.4f} (threshold {liq.tolerance})")
