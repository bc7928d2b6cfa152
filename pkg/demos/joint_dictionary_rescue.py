# One cross observable turns an impossible fit into an exact one.
#
# The discrete map x_next = 0.9 x + 0.1 x u is the one-step companion of the
# cross-term obstruction demo. A separable model in the observables {x} and
# {u} has to approximate the product x*u with a sum of one-variable terms,
# so its training residual plateaus and its rollouts drift. Appending the
# single joint observable psi_xu(x, u) = x*u makes the map exactly linear in
# the lifted coordinates; the joint fit lands at roundoff and its
# consistency conditions all pass. The point: when checks flag a dictionary,
# the fix is a richer dictionary, not more data.

import numpy as np

from kooplab import (
    builtin_system,
    generate_dataset,
    default_grid,
    fit_separable,
    fit_joint,
    identity,
    build_joint_dictionary,
    rollout,
    summarize,
)
from kooplab.consistency import check_corollary4, check_def2, check_theorem5

HORIZON = 20
N_TRAJ = 5


def heldout_rmse(model, system, rng):
    """RMSE at each step over a few held-out rollouts under shared inputs."""
    errs = np.zeros((N_TRAJ, HORIZON))
    for t in range(N_TRAJ):
        x0 = rng.uniform(-1.0, 1.0, size=1)
        controls = rng.uniform(-1.0, 1.0, size=(HORIZON, 1))
        x_true = x0.copy()
        truth = np.empty((HORIZON, 1))
        for k in range(HORIZON):
            x_true = system.evaluate(x_true, controls[k])
            truth[k] = x_true
        pred = rollout(model, x0, controls).states[1:]
        errs[t] = np.linalg.norm(truth - pred, axis=1)
    return np.sqrt(np.mean(errs ** 2, axis=0))


def main():
    system = builtin_system("bilinear-discrete", alpha=0.9, beta=0.1)
    data = generate_dataset(system, 400, seed=31, kind="discrete-pairs")

    dict_x = identity(1)
    separable = fit_separable(data, dict_x, identity(1, "u"))
    joint = fit_joint(data, dict_x, build_joint_dictionary(1, 1, 1, 1))

    print("system: x_next = 0.9 x + 0.1 x u   (400 training pairs, seed 31)")
    print()
    print("training residuals:")
    print(f"  separable, observables {{x}}, {{u}}:      {separable.training_residual:.3e}")
    print(f"  joint, observables {{x}} plus {{x*u}}:    {joint.training_residual:.3e}")
    print()

    rng = np.random.default_rng(32)
    rmse_sep = heldout_rmse(separable, system, rng)
    rng = np.random.default_rng(32)  # same held-out trajectories for both
    rmse_joint = heldout_rmse(joint, system, rng)
    print(f"held-out rollout RMSE ({N_TRAJ} trajectories, horizon {HORIZON}):")
    print(f"  step        {'separable':>12} {'joint':>12}")
    for k in (1, 5, 20):
        print(f"  {k:<10} {rmse_sep[k - 1]:>12.3e} {rmse_joint[k - 1]:>12.3e}")
    print()

    # The verdicts agree with the numbers above and explain them.
    grid = default_grid(system)
    cor4 = check_corollary4(system, dict_x, grid)
    print(f"separable family, COR4-FXU: max residual {cor4.max_residual:.4f} "
          f"-> {cor4.verdict}")
    for r in check_def2(system, separable, grid):
        print(f"separable model, {r.condition}: max residual "
              f"{r.max_residual:.4f} -> {r.verdict}")
    t5 = check_theorem5(system, joint.dict_x, joint.dict_xu,
                        joint.K_x, joint.K_xu, grid)
    print("joint family, one-step map conditions:")
    print(summarize(t5).to_text())


if __name__ == "__main__":
    main()
