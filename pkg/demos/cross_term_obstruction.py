# A small training residual can hide a structural impossibility.
#
# The scalar system xdot = a x + b x u couples state and input through the
# product x*u. The separable and affine formulations assume the input enters
# through terms that do not depend on x, so with state-only observables no
# exact model of either kind exists, no matter how much data goes into the
# fit. The COR1-FXU condition detects this from the system and the
# dictionary alone: its residual field is the size of the cross term
# |f(x,u) - f_x(x) - f_u(u)| over a grid, so it localizes the obstruction at
# the corners where |x*u| is largest, and no fitted operator appears
# anywhere in the computation.

import numpy as np

from kooplab import (
    builtin_system,
    discretize,
    generate_dataset,
    default_grid,
    fit_separable,
    identity,
)
from kooplab.consistency import check_corollary1, check_corollary4


def main():
    system = builtin_system("bilinear-scalar", a=-1.0, b=1.0)
    grid = default_grid(system)
    dict_x = identity(1)

    # The fit itself looks unremarkable: the residual is merely "not tiny".
    data = generate_dataset(system, 400, seed=21, kind="continuous-derivative")
    model = fit_separable(data, dict_x, identity(1, "u"))
    print(f"system: xdot = -x + x*u")
    print(f"separable fit on 400 samples: training residual {model.training_residual:.4f}")
    print()

    # The condition check is categorical, not statistical.
    report = check_corollary1(system, dict_x, grid)
    x_star = report.points["x"][np.argmax(report.residuals)]
    u_star = report.points["u"][np.argmax(report.residuals)]
    print("COR1-FXU over the default grid (states in [-2,2], inputs in [-1,1]):")
    print(f"  max residual  {report.max_residual:.4f}   (tolerance {report.tolerance:g})")
    print(f"  mean residual {report.mean_residual:.4f}")
    print(f"  worst point   x = {x_star[0]:+.1f}, u = {u_star[0]:+.1f}")
    print(f"  verdict       {report.verdict}")
    print()
    print("The residual field is |x*u| itself, so the worst points are the grid")
    print("corners (x, u) = (+-2, -+1); nothing about the fit enters the check.")
    print()

    # The discrete-time analogue flags the one-step map the same way.
    dsystem = discretize(system, 0.1)
    dreport = check_corollary4(dsystem, dict_x, default_grid(dsystem))
    print(f"COR4-FXU on the dt=0.1 discretized map: max residual "
          f"{dreport.max_residual:.4f} -> {dreport.verdict}")
    print()
    print("Conclusion: a verdict of inconsistent proves no exact separable or")
    print("affine model exists for this dictionary. Enlarging the dataset or")
    print("tuning the ridge cannot change it; enriching the dictionary with a")
    print("cross observable can (see joint_dictionary_rescue.py).")


if __name__ == "__main__":
    main()
