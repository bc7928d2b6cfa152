# Measure the orders the numerics claim, and see why discretization choice
# matters to the splitting hypothesis.
#
# Three short studies:
#   1. the central-difference Jacobian halves its step -> error drops 4x
#      (second order);
#   2. the one-step integrator halves dt -> endpoint error drops ~16x
#      (fourth order);
#   3. a field that splits additively into f_x(x) + f_u(u) stays split
#      under forward Euler but not under the fourth-order step, whose
#      compositions introduce an O(dt^3) cross term. The pairwise
#      separability checks assume an exactly split map, so they refuse the
#      fourth-order discretization (hypothesis guard) and run on the Euler
#      map, where the dictionary itself is still found wanting.

import numpy as np

from kooplab import builtin_system, default_grid, monomials
from kooplab.dynamics import ControlledSystem, discretize
from kooplab.numerics import finite_difference_jacobian, rk4_step
from kooplab.consistency import HypothesisViolationError, check_corollary5

DELTA = 0.5


def fd_order():
    f = np.exp  # elementwise, so the true Jacobian is diag(exp(x))
    x0 = np.array([0.3, -0.7])
    truth = np.diag(np.exp(x0))
    errs = []
    for h in (1e-3, 5e-4):
        J = finite_difference_jacobian(f, x0, h=h)
        errs.append(np.max(np.abs(J - truth)))
    print("central differences on exp at (0.3, -0.7):")
    print(f"  error(h=1e-3)   {errs[0]:.3e}")
    print(f"  error(h=5e-4)   {errs[1]:.3e}")
    print(f"  ratio           {errs[0] / errs[1]:.3f}   (second order -> 4)")
    print()


def integrator_order():
    # xdot = -x from x0 = 1 over [0, 1]; exact endpoint exp(-1).
    f = lambda x, u, t: -x
    errs = []
    for dt in (0.1, 0.05):
        x = np.array([1.0])
        for k in range(round(1.0 / dt)):
            x = rk4_step(f, x, np.zeros(1), k * dt, dt)
        errs.append(abs(x[0] - np.exp(-1.0)))
    print("one-step integrator on xdot = -x over [0, 1]:")
    print(f"  error(dt=0.10)  {errs[0]:.3e}")
    print(f"  error(dt=0.05)  {errs[1]:.3e}")
    print(f"  ratio           {errs[0] / errs[1]:.3f}   (fourth order -> 16)")
    print()


def euler_duffing(dt):
    base = builtin_system("duffing-forced", delta=DELTA)
    return ControlledSystem(
        "duffing-euler", "discrete", 2, 1,
        f_x=lambda x: x + dt * base.f_x(x),
        f_u=lambda u: dt * np.array([0.0, u[0]]),
        f_xu=lambda x, u: np.zeros(2),
        jac_fx=lambda x: np.eye(2) + dt * base.jacobian_fx(x),
        jac_fu=lambda u: dt * np.array([[0.0], [1.0]]),
        jac_fxu_x=lambda x, u: np.zeros((2, 2)),
        jac_fxu_u=lambda x, u: np.zeros((2, 1)),
    )


def splitting():
    base = builtin_system("duffing-forced", delta=DELTA)
    grid = default_grid(base, points_per_axis=5)

    # Cross term of the discretized map: step(x,u) - step(x,0) - step(0,u) + step(0,0).
    print("cross term introduced by the fourth-order discretization:")
    zx, zu = np.zeros(2), np.zeros(1)
    prev = None
    for dt in (0.2, 0.1, 0.05):
        sys_d = discretize(base, dt)
        worst = 0.0
        for x in grid.states:
            for u in grid.inputs:
                cross = (sys_d.evaluate(x, u) - sys_d.evaluate(x, zu)
                         - sys_d.evaluate(zx, u) + sys_d.evaluate(zx, zu))
                worst = max(worst, np.max(np.abs(cross)))
        ratio = "" if prev is None else f"   ratio {prev / worst:.2f}"
        print(f"  dt={dt:<5} max |cross| {worst:.3e}{ratio}")
        prev = worst
    print("  halving dt cuts the cross term ~8x: the coupling is O(dt^3),")
    print("  absent from the continuous field and from its Euler map.")
    print()

    quad = monomials(2, 2, include_constant=False)
    try:
        check_corollary5(discretize(base, 0.1), quad,
                         default_grid(base, points_per_axis=5), seed=7)
    except HypothesisViolationError as e:
        print(f"pairwise check on the fourth-order map is refused:\n  {e}")
    print()

    reports = check_corollary5(euler_duffing(0.1), quad,
                               default_grid(base, points_per_axis=5), seed=7)
    print("same check on the exactly split Euler map (quadratic observables):")
    for r in reports:
        print(f"  {r.condition:<16} max {r.max_residual:.3f} -> {r.verdict}")
    print("  the hypothesis holds, and the verdict now speaks about the")
    print("  dictionary: quadratic observables cannot carry this map exactly.")


if __name__ == "__main__":
    fd_order()
    integrator_order()
    splitting()
