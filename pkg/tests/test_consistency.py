"""Consistency-condition checkers: exact pairings, known obstructions, reports."""

import numpy as np
import pytest

from kooplab.consistency import (
    CONDITION_IDS,
    NECESSITY_QUALIFIER,
    ConsistencyReport,
    HypothesisViolationError,
    check_corollary1,
    check_corollary2,
    check_corollary3_kma,
    check_corollary4,
    check_corollary5,
    check_corollary6,
    check_def1,
    check_def2,
    check_def2_joint,
    check_kaiser,
    check_theorem2,
    check_theorem3,
    check_theorem4,
    check_theorem5,
    read_reports_json,
    read_summary_csv,
    summarize,
    write_reports_json,
    write_summary_csv,
)
from kooplab.dynamics import (
    ControlledSystem,
    EvaluationGrid,
    bilinear_discrete,
    builtin_system,
    default_grid,
    discretize,
    generate_dataset,
)
from kooplab.formulations import (
    AffineModel,
    EigenModel,
    JointModel,
    SeparableModel,
    fit_affine,
)
from kooplab.observables import (
    CallableJointDictionary,
    CombinationDictionary,
    CustomDictionary,
    build_joint_dictionary,
    identity,
    monomials,
    rbf,
)

MU, LAM = -0.05, -1.0
B_SLOW = LAM / (LAM - 2.0 * MU)  # x2 - B_SLOW*x1^2 is invariant under the flow


def xu_joint_dict():
    """Joint dictionary with the single observable x*u (scalar state/input)."""
    return CallableJointDictionary(
        1, 1, ["x1*u1"],
        lambda x, u: np.array([x[0] * u[0]]),
        lambda x, u: np.array([[u[0]]]),
        lambda x, u: np.array([[x[0]]]),
    )


def x_and_xu_joint_dict():
    """Joint dictionary {x, x*u}: a state row plus a genuine cross row."""
    return CallableJointDictionary(
        1, 1, ["x1", "x1*u1"],
        lambda x, u: np.array([x[0], x[0] * u[0]]),
        lambda x, u: np.array([[1.0], [u[0]]]),
        lambda x, u: np.array([[0.0], [x[0]]]),
    )


def scalar_discrete(f_x, f_u, jac_fx, jac_fu, name="scalar-discrete"):
    return ControlledSystem(
        name, "discrete", 1, 1,
        f_x=f_x,
        f_u=f_u,
        f_xu=lambda x, u: np.zeros(1),
        jac_fx=jac_fx,
        jac_fu=jac_fu,
        jac_fxu_x=lambda x, u: np.zeros((1, 1)),
        jac_fxu_u=lambda x, u: np.zeros((1, 1)),
    )


def slow_manifold_eigendict():
    base = monomials(2, 2, include_constant=False)
    coeffs = np.array([
        [1.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, -B_SLOW, 0.0, 0.0],
    ])
    return CombinationDictionary(base, coeffs, names=["phi1", "phi2"])


class TestConsistencyReport:
    def test_verdict_boundary(self):
        pts = {"x": np.array([[0.0], [1.0]])}
        r = ConsistencyReport("COR1-FXU", 1.0, pts, np.array([0.5, 1.0]))
        assert r.verdict == "consistent"
        r2 = ConsistencyReport("COR1-FXU", 0.999, pts, np.array([0.5, 1.0]))
        assert r2.verdict == "inconsistent"

    def test_argmax_point(self):
        pts = {"x": np.array([[0.0], [1.0], [2.0]]), "u": np.array([[5.0], [6.0], [7.0]])}
        r = ConsistencyReport("COR1-FXU", 1e-6, pts, np.array([0.1, 0.9, 0.3]))
        assert r.argmax_index == 1
        assert r.argmax_point["x"] == pytest.approx([1.0])
        assert r.argmax_point["u"] == pytest.approx([6.0])
        assert r.max_residual == pytest.approx(0.9)
        assert r.mean_residual == pytest.approx((0.1 + 0.9 + 0.3) / 3)

    def test_unknown_condition_rejected(self):
        with pytest.raises(ValueError, match="unknown condition"):
            ConsistencyReport("T9-C9", 1e-6, {}, np.array([0.0]))

    def test_misaligned_points_rejected(self):
        with pytest.raises(ValueError, match="rows"):
            ConsistencyReport(
                "COR1-FXU", 1e-6, {"x": np.zeros((3, 1))}, np.array([0.0, 1.0])
            )

    def test_empty_residuals_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            ConsistencyReport("COR1-FXU", 1e-6, {}, np.array([]))


class TestDef1:
    def test_autonomous_slow_manifold_exact(self):
        system = builtin_system("slow-manifold", mu=MU, lam=LAM)
        base = monomials(2, 2, include_constant=False)
        coeffs = np.zeros((3, 5))
        coeffs[0, 0] = coeffs[1, 1] = coeffs[2, 2] = 1.0  # x1, x2, x1^2
        dict3 = CombinationDictionary(base, coeffs)
        L = np.array([[MU, 0.0, 0.0], [0.0, LAM, -LAM], [0.0, 0.0, 2.0 * MU]])
        model = AffineModel(dict3, L, None, "continuous", input_dim=1)
        report = check_def1(system, model, default_grid(system))
        assert report.condition == "DEF1-AUTON"
        assert report.max_residual <= 1e-12
        assert report.verdict == "consistent"
        assert set(report.points) == {"x"}

    def test_controlled_linear_exact(self):
        system = builtin_system("linear")
        A = np.array([[-1.0, 0.0], [0.0, -2.0]])
        B = np.array([[1.0], [1.0]])
        model = AffineModel(identity(2), A, B, "continuous")
        report = check_def1(system, model, default_grid(system))
        assert report.condition == "DEF1-CTRL"
        assert report.max_residual <= 1e-13
        assert set(report.points) == {"x", "u"}

    def test_controlled_wrong_operator_detected(self):
        system = builtin_system("linear")
        A = np.array([[-1.0 + 0.1, 0.0], [0.0, -2.0]])
        B = np.array([[1.0], [1.0]])
        model = AffineModel(identity(2), A, B, "continuous")
        report = check_def1(system, model, default_grid(system))
        # defect is |0.1 * x1|, largest at the grid corner x1 = +-2
        assert report.max_residual == pytest.approx(0.2, abs=1e-12)
        assert report.verdict == "inconsistent"
        assert abs(report.argmax_point["x"][0]) == pytest.approx(2.0)

    def test_separable_and_joint_models_exact(self):
        linear = builtin_system("linear")
        A = np.array([[-1.0, 0.0], [0.0, -2.0]])
        B = np.array([[1.0], [1.0]])
        sep = SeparableModel(identity(2), identity(1, var_prefix="u"), A, B, "continuous")
        assert check_def1(linear, sep, default_grid(linear)).max_residual <= 1e-13

        bil = builtin_system("bilinear-scalar", a=-1.0, b=1.0)
        joint = JointModel(
            identity(1), xu_joint_dict(), np.array([[-1.0]]), np.array([[1.0]]),
            "continuous",
        )
        report = check_def1(bil, joint, default_grid(bil))
        assert report.condition == "DEF1-CTRL"
        assert report.max_residual <= 1e-13

    def test_eigen_state_only_dispatch(self):
        system = builtin_system("slow-manifold", mu=MU, lam=LAM)
        model = EigenModel(slow_manifold_eigendict(), [MU, LAM], input_dim=1)
        grid = default_grid(system)
        auto = check_def1(system, model, grid.autonomous())
        assert auto.condition == "DEF1-CTRL"
        assert auto.max_residual <= 1e-12
        # the additive input hits phi2 but the eigen rate cannot see it
        full = check_def1(system, model, grid)
        assert full.max_residual == pytest.approx(1.0, abs=1e-12)

    def test_joint_eigendict_exact_with_udot(self):
        system = builtin_system("bilinear-scalar", a=MU, b=0.0)  # xdot = mu*x
        eigendict = CallableJointDictionary(
            1, 1, ["u1", "x1*u1"],
            lambda x, u: np.array([u[0], x[0] * u[0]]),
            lambda x, u: np.array([[0.0], [u[0]]]),
            lambda x, u: np.array([[1.0], [x[0]]]),
        )
        model = EigenModel(eigendict, [0.0, MU])
        grid = default_grid(system)
        r1 = check_def1(system, model, grid, u_dot=np.array([0.3]))
        assert r1.condition == "DEF1-JOINT"
        assert r1.max_residual <= 1e-13
        r2 = check_def1(system, model, grid, u_dot=lambda x, u: np.array([0.3]))
        assert r2.max_residual <= 1e-13

    def test_joint_eigendict_requires_udot(self):
        system = builtin_system("bilinear-scalar", a=MU, b=0.0)
        eigendict = CallableJointDictionary(
            1, 1, ["u1"],
            lambda x, u: np.array([u[0]]),
            lambda x, u: np.array([[0.0]]),
            lambda x, u: np.array([[1.0]]),
        )
        model = EigenModel(eigendict, [0.0])
        with pytest.raises(ValueError, match="u_dot"):
            check_def1(system, model, default_grid(system))

    def test_time_kind_mismatches_rejected(self):
        dsys = bilinear_discrete(0.9, 0.1)
        model = AffineModel(identity(1), [[0.9]], [[0.1]], "discrete")
        with pytest.raises(ValueError, match="continuous"):
            check_def1(dsys, model, default_grid(dsys))
        csys = builtin_system("bilinear-scalar", a=-1.0, b=1.0)
        with pytest.raises(ValueError, match="continuous"):
            check_def1(csys, model, default_grid(csys))


class TestDef2:
    def test_autonomous_exact(self):
        system = scalar_discrete(
            lambda x: 0.9 * x, lambda u: np.zeros(1),
            lambda x: np.array([[0.9]]), lambda u: np.array([[0.0]]),
        )
        model = AffineModel(identity(1), [[0.9]], None, "discrete", input_dim=1)
        reports = check_def2(system, model, default_grid(system))
        assert [r.condition for r in reports] == ["DEF2-AUTON"]
        assert reports[0].max_residual <= 1e-14

    def test_autonomous_quadratic_map_obstruction(self):
        # x_next = x^2 lifts exactly on {x, x^2} values, but the derivative
        # identity needs x^4 in the dictionary, so the defect is 4|x|^3
        system = scalar_discrete(
            lambda x: x**2, lambda u: np.zeros(1),
            lambda x: np.array([[2.0 * x[0]]]), lambda u: np.array([[0.0]]),
        )
        model = AffineModel(
            monomials(1, 2, include_constant=False), [[0.0, 1.0], [0.0, 0.0]],
            None, "discrete", input_dim=1,
        )
        report = check_def2(system, model, default_grid(system))[0]
        assert report.max_residual == pytest.approx(32.0, abs=1e-9)
        states = report.points["x"].ravel()
        at_one = np.flatnonzero(np.isclose(states, 1.0))[0]
        assert report.residuals[at_one] == pytest.approx(4.0, abs=1e-10)

    def test_controlled_fitted_linear_exact(self):
        system = builtin_system("linear")
        data = generate_dataset(system, 300, seed=5, dt=0.1, kind="discrete-pairs")
        model = fit_affine(data, identity(2))
        dsys = discretize(system, 0.1)
        reports = check_def2(dsys, model, default_grid(dsys))
        assert [r.condition for r in reports] == ["DEF2-CTRL-X", "DEF2-CTRL-U"]
        for r in reports:
            assert r.max_residual <= 1e-8
            assert r.verdict == "consistent"

    def test_controlled_bilinear_obstruction(self):
        system = bilinear_discrete(0.9, 0.1)
        model = AffineModel(identity(1), [[0.9]], [[0.0]], "discrete")
        rx, ru = check_def2(system, model, default_grid(system))
        # d(next)/dx = 0.9 + 0.1u and d(next)/du = 0.1x; the model says 0.9 and 0
        assert rx.max_residual == pytest.approx(0.1, abs=1e-12)
        assert ru.max_residual == pytest.approx(0.2, abs=1e-12)

    def test_continuous_model_rejected(self):
        dsys = bilinear_discrete(0.9, 0.1)
        model = AffineModel(identity(1), [[-1.0]], [[1.0]], "continuous")
        with pytest.raises(ValueError, match="discrete"):
            check_def2(dsys, model, default_grid(dsys))


class TestDef2Joint:
    def setup_method(self):
        self.a, self.c = 0.8, 0.5
        self.system = scalar_discrete(
            lambda x: self.a * x, lambda u: np.zeros(1),
            lambda x: np.array([[self.a]]), lambda u: np.array([[0.0]]),
        )
        self.K = np.diag([self.a, self.a * self.c])

    def test_exact_with_input_evolution(self):
        reports = check_def2_joint(
            self.system, x_and_xu_joint_dict(), self.K, default_grid(self.system),
            input_evolution=(lambda u: self.c * u, lambda u: np.array([[self.c]])),
        )
        assert [r.condition for r in reports] == ["DEF2-JOINT-X", "DEF2-JOINT-U"]
        for r in reports:
            assert r.max_residual <= 1e-14
            assert r.note is None

    def test_without_input_evolution_notes_and_defects(self):
        rx, ru = check_def2_joint(
            self.system, x_and_xu_joint_dict(), self.K, default_grid(self.system)
        )
        # held-input evaluation misses the true u decay: a*|u|*(1-c) in x,
        # and the whole transport row a*c*|x| in u
        assert rx.max_residual == pytest.approx(self.a * (1 - self.c), abs=1e-12)
        assert ru.max_residual == pytest.approx(self.a * self.c * 2.0, abs=1e-12)
        assert "held" in rx.note
        assert "transport" in ru.note

    def test_wrong_operator_shape_rejected(self):
        with pytest.raises(ValueError, match="2x2"):
            check_def2_joint(
                self.system, x_and_xu_joint_dict(), np.eye(3), default_grid(self.system)
            )


class TestTheorem2:
    def test_linear_identity_exact(self):
        system = builtin_system("linear")
        A = np.array([[-1.0, 0.0], [0.0, -2.0]])
        B = np.array([[1.0], [1.0]])
        reports = check_theorem2(
            system, identity(2), identity(1, var_prefix="u"), A, B,
            default_grid(system),
        )
        assert [r.condition for r in reports] == ["T2-C1", "T2-C2", "T2-C3"]
        assert set(reports[0].points) == {"x"}
        assert set(reports[1].points) == {"u"}
        assert set(reports[2].points) == {"x", "u"}
        for r in reports:
            assert r.max_residual <= 1e-13

    def test_quadratic_observable_cross_defect(self):
        # additive forcing through x2^2: the x-dependent input response
        # (d psi/dx - d psi/dx|0) f_u = 2*x2*u cannot be separated
        system = builtin_system("duffing-forced", delta=0.5)
        dict_x = monomials(2, 2, include_constant=False)
        L_x = np.zeros((5, 5))
        L_u = np.zeros((5, 1))
        grid = default_grid(system, points_per_axis=5)
        reports = check_theorem2(system, dict_x, identity(1, var_prefix="u"),
                                 L_x, L_u, grid)
        c3 = reports[2]
        assert c3.max_residual == pytest.approx(4.0, abs=1e-12)
        X, U = c3.points["x"], c3.points["u"]
        sel = np.flatnonzero(
            np.isclose(X[:, 0], 0.0) & np.isclose(X[:, 1], 1.0)
            & np.isclose(U[:, 0], 1.0)
        )[0]
        assert c3.residuals[sel] == pytest.approx(2.0, abs=1e-12)

    def test_restricted_input_evaluation(self):
        # T2-C2 uses the state Jacobian frozen at the origin, so for a
        # quadratic dictionary only the coordinate rows respond to u
        system = builtin_system("linear")
        dict_x = monomials(2, 2)
        L_u = np.zeros((6, 1))
        reports = check_theorem2(system, dict_x, identity(1, var_prefix="u"),
                                 np.zeros((6, 6)), L_u, default_grid(system))
        expected = np.abs(default_grid(system).inputs).ravel()
        assert reports[1].residuals == pytest.approx(expected, abs=1e-14)

    def test_hypothesis_f_u_at_zero(self):
        system = ControlledSystem(
            "offset", "continuous", 1, 1,
            f_x=lambda x: -x,
            f_u=lambda u: u + 1.0,
            f_xu=lambda x, u: np.zeros(1),
        )
        with pytest.raises(HypothesisViolationError, match=r"f_u\(0\) = 0"):
            check_theorem2(system, identity(1), identity(1, var_prefix="u"),
                           [[-1.0]], [[1.0]], default_grid(system))

    def test_hypothesis_cross_vanishes_on_axes(self):
        system = ControlledSystem(
            "bad-cross", "continuous", 1, 1,
            f_x=lambda x: -x,
            f_u=lambda u: np.zeros(1),
            f_xu=lambda x, u: x * (u + 1.0),
        )
        with pytest.raises(HypothesisViolationError, match=r"f_xu\(x, 0\) = 0"):
            check_theorem2(system, identity(1), identity(1, var_prefix="u"),
                           [[-1.0]], [[0.0]], default_grid(system))

    def test_hypothesis_input_dictionary_at_zero(self):
        system = builtin_system("linear")
        with pytest.raises(HypothesisViolationError, match=r"psi_u\(0\) = 0"):
            check_theorem2(system, identity(2), monomials(1, 1, var_prefix="u"),
                           np.zeros((2, 2)), np.zeros((2, 2)), default_grid(system))

    def test_discrete_system_rejected(self):
        dsys = bilinear_discrete(0.9, 0.1)
        with pytest.raises(ValueError, match="continuous"):
            check_theorem2(dsys, identity(1), identity(1, var_prefix="u"),
                           [[0.9]], [[0.1]], default_grid(dsys))


class TestCorollary1:
    def test_bilinear_cross_field(self):
        system = builtin_system("bilinear-scalar", a=-1.0, b=1.0)
        report = check_corollary1(system, identity(1), default_grid(system))
        assert report.condition == "COR1-FXU"
        assert report.max_residual == pytest.approx(2.0, abs=1e-9)
        assert report.verdict == "inconsistent"
        X, U = report.points["x"], report.points["u"]
        sel = np.flatnonzero(np.isclose(X[:, 0], 1.0) & np.isclose(U[:, 0], 1.0))[0]
        assert report.residuals[sel] == pytest.approx(1.0, abs=1e-12)
        assert abs(report.argmax_point["x"][0]) == pytest.approx(2.0)
        assert abs(report.argmax_point["u"][0]) == pytest.approx(1.0)

    def test_no_cross_term_consistent(self):
        system = builtin_system("duffing-forced", delta=0.5)
        report = check_corollary1(system, identity(2), default_grid(system, points_per_axis=5))
        assert report.max_residual == 0.0
        assert report.verdict == "consistent"

    def test_state_inclusive_required(self):
        system = builtin_system("bilinear-scalar", a=-1.0, b=1.0)
        lifted = rbf(dim=1, n_centers=4, region=[(-2.0, 2.0)], seed=0)
        with pytest.raises(ValueError, match="state-inclusive"):
            check_corollary1(system, lifted, default_grid(system))


class TestCorollary2:
    def test_constant_jacobian_consistent(self):
        system = builtin_system("linear")
        report = check_corollary2(system, identity(2), default_grid(system))
        assert report.condition == "COR2-PAIRWISE"
        assert report.n_points == 200
        assert set(report.points) == {"x1", "x2", "u"}
        assert report.max_residual == 0.0

    def test_quadratic_observable_defect_at_known_pair(self):
        system = builtin_system("duffing-forced", delta=0.5)
        grid = EvaluationGrid(
            states=np.array([[0.0, 1.0], [0.0, 0.0]]), inputs=np.array([[1.0]])
        )
        report = check_corollary2(
            system, monomials(2, 2, include_constant=False), grid, n_pairs=50
        )
        # the x2^2 row differs by (0, 2) between the two states; against
        # f_u = (0, u) with u = 1 that is a defect of exactly 2
        assert report.max_residual == pytest.approx(2.0, abs=1e-12)
        assert 0.0 < report.mean_residual < 2.0

    def test_seeded_sampling_is_deterministic(self):
        system = builtin_system("duffing-forced", delta=0.5)
        dict_x = monomials(2, 2, include_constant=False)
        grid = default_grid(system, points_per_axis=5)
        r1 = check_corollary2(system, dict_x, grid, seed=7)
        r2 = check_corollary2(system, dict_x, grid, seed=7)
        assert np.array_equal(r1.residuals, r2.residuals)
        assert np.array_equal(r1.points["x1"], r2.points["x1"])

    def test_cross_term_hypothesis(self):
        system = builtin_system("bilinear-scalar", a=-1.0, b=1.0)
        with pytest.raises(HypothesisViolationError, match=r"f_xu\(x, u\) = 0"):
            check_corollary2(system, identity(1), default_grid(system))


class TestCorollary3:
    def test_linear_exact_all_four(self):
        system = builtin_system("linear")
        A = np.array([[-1.0, 0.0], [0.0, -2.0]])
        B = np.array([[1.0], [1.0]])
        reports = check_corollary3_kma(system, identity(2), A, B, default_grid(system))
        assert [r.condition for r in reports] == [
            "COR1-FXU", "COR2-PAIRWISE", "COR3-KMA-B", "COR3-KMA-L"
        ]
        for r in reports:
            assert r.max_residual <= 1e-13
            assert r.verdict == "consistent"

    def test_cross_term_skips_pairwise(self):
        system = builtin_system("bilinear-scalar", a=-1.0, b=1.0)
        reports = check_corollary3_kma(
            system, identity(1), [[-1.0]], [[0.0]], default_grid(system)
        )
        assert [r.condition for r in reports] == ["COR1-FXU", "COR3-KMA-B", "COR3-KMA-L"]
        assert "skipped" in reports[0].note
        assert reports[0].max_residual == pytest.approx(2.0, abs=1e-9)
        # the x-only and u-only parts of the bilinear field are affine-exact
        assert reports[1].max_residual <= 1e-13
        assert reports[2].max_residual <= 1e-13

    def test_nonlinear_input_response_defect(self):
        system = ControlledSystem(
            "cubic-input", "continuous", 1, 1,
            f_x=lambda x: -x,
            f_u=lambda u: u**3 + u,
            f_xu=lambda x, u: np.zeros(1),
            jac_fx=lambda x: np.array([[-1.0]]),
            jac_fu=lambda u: np.array([[3.0 * u[0] ** 2 + 1.0]]),
            jac_fxu_x=lambda x, u: np.zeros((1, 1)),
            jac_fxu_u=lambda x, u: np.zeros((1, 1)),
        )
        reports = check_corollary3_kma(
            system, identity(1), [[-1.0]], [[1.0]], default_grid(system)
        )
        kma_b = reports[2]
        assert kma_b.condition == "COR3-KMA-B"
        assert kma_b.max_residual == pytest.approx(3.0, abs=1e-12)
        assert kma_b.verdict == "inconsistent"
        assert reports[3].max_residual <= 1e-13

    def test_state_inclusive_required(self):
        system = builtin_system("linear")
        lifted = rbf(dim=2, n_centers=5, region=[(-2, 2), (-2, 2)], seed=1)
        with pytest.raises(ValueError, match="state-inclusive"):
            check_corollary3_kma(system, lifted, np.eye(5), np.zeros((5, 1)),
                                 default_grid(system))


class TestTheorem3:
    def test_bilinear_exact(self):
        system = builtin_system("bilinear-scalar", a=-1.0, b=1.0)
        reports = check_theorem3(
            system, identity(1), xu_joint_dict(), [[-1.0]], [[1.0]],
            default_grid(system),
        )
        assert [r.condition for r in reports] == ["T3-C1", "T3-C2"]
        for r in reports:
            assert r.max_residual <= 1e-13
            assert r.verdict == "consistent"

    def test_wrong_cross_operator_detected(self):
        system = builtin_system("bilinear-scalar", a=-1.0, b=1.0)
        reports = check_theorem3(
            system, identity(1), xu_joint_dict(), [[-1.0]], [[0.0]],
            default_grid(system),
        )
        assert reports[1].max_residual == pytest.approx(2.0, abs=1e-12)

    def test_additive_input_folds_into_cross(self):
        # f_u = B u is carried by the cross pair (psi_xu = u, L_xu = B)
        system = builtin_system("linear")
        dict_xu = build_joint_dictionary(2, 1, 0, 1)
        reports = check_theorem3(
            system, identity(2), dict_xu,
            np.array([[-1.0, 0.0], [0.0, -2.0]]), np.array([[1.0], [1.0]]),
            default_grid(system),
        )
        for r in reports:
            assert r.max_residual <= 1e-13

    def test_cross_dictionary_hypothesis(self):
        system = builtin_system("bilinear-scalar", a=-1.0, b=1.0)
        bad = CallableJointDictionary(
            1, 1, ["x1*u1+1"],
            lambda x, u: np.array([x[0] * u[0] + 1.0]),
            lambda x, u: np.array([[u[0]]]),
            lambda x, u: np.array([[x[0]]]),
        )
        with pytest.raises(HypothesisViolationError, match=r"psi_xu\(x, 0\) = 0"):
            check_theorem3(system, identity(1), bad, [[-1.0]], [[1.0]],
                           default_grid(system))


class TestKaiser:
    def test_slow_manifold_exact_on_zero_input_slice(self):
        system = builtin_system("slow-manifold", mu=MU, lam=LAM)
        grid = default_grid(system).autonomous()
        report = check_kaiser(system, slow_manifold_eigendict(), [MU, LAM], grid)
        assert report.condition == "KAISER"
        assert report.max_residual <= 1e-12
        assert report.verdict == "consistent"

    def test_additive_input_breaks_eigenpair_off_slice(self):
        system = builtin_system("slow-manifold", mu=MU, lam=LAM)
        report = check_kaiser(
            system, slow_manifold_eigendict(), [MU, LAM], default_grid(system)
        )
        assert report.max_residual == pytest.approx(1.0, abs=1e-12)

    def test_perturbed_eigenvalue_detected(self):
        system = builtin_system("slow-manifold", mu=MU, lam=LAM)
        grid = default_grid(system).autonomous()
        report = check_kaiser(
            system, slow_manifold_eigendict(), [MU, LAM + 0.1], grid
        )
        # defect 0.1 * |phi2|, maximal at x1 = +-2, x2 = -2
        assert report.max_residual == pytest.approx(0.1 * (2.0 + 4.0 * B_SLOW), abs=1e-9)
        assert report.max_residual >= 0.05
        assert report.verdict == "inconsistent"

    def test_diagonal_matrix_accepted_vector_equivalent(self):
        system = builtin_system("slow-manifold", mu=MU, lam=LAM)
        grid = default_grid(system, points_per_axis=3).autonomous()
        d = slow_manifold_eigendict()
        r_vec = check_kaiser(system, d, [MU, LAM], grid)
        r_mat = check_kaiser(system, d, np.diag([MU, LAM]), grid)
        assert np.array_equal(r_vec.residuals, r_mat.residuals)

    def test_off_diagonal_rejected(self):
        system = builtin_system("slow-manifold", mu=MU, lam=LAM)
        bad = np.array([[MU, 0.5], [0.0, LAM]])
        with pytest.raises(ValueError, match="diagonal"):
            check_kaiser(system, slow_manifold_eigendict(), bad, default_grid(system))

    def test_eigenvalue_count_mismatch(self):
        system = builtin_system("slow-manifold", mu=MU, lam=LAM)
        with pytest.raises(ValueError, match="one eigenvalue per"):
            check_kaiser(system, slow_manifold_eigendict(), [MU], default_grid(system))

    def test_joint_eigendict_transport_cancels(self):
        system = builtin_system("bilinear-scalar", a=MU, b=0.0)
        eigendict = CallableJointDictionary(
            1, 1, ["x1*u1"],
            lambda x, u: np.array([x[0] * u[0]]),
            lambda x, u: np.array([[u[0]]]),
            lambda x, u: np.array([[x[0]]]),
        )
        report = check_kaiser(system, eigendict, [MU], default_grid(system))
        assert report.max_residual <= 1e-14


class TestTheorem4:
    def test_discretized_linear_fitted_exact(self):
        system = builtin_system("linear")
        data = generate_dataset(system, 300, seed=3, dt=0.1, kind="discrete-pairs")
        model = fit_affine(data, identity(2))
        dsys = discretize(system, 0.1)
        reports = check_theorem4(
            dsys, identity(2), identity(1, var_prefix="u"), model.K, model.B,
            default_grid(dsys, points_per_axis=5),
        )
        assert [r.condition for r in reports] == ["T4-C1", "T4-C2", "T4-C3", "T4-C4"]
        for r in reports:
            assert r.max_residual <= 1e-8
            assert r.verdict == "consistent"

    def test_bilinear_discrete_cross_defects(self):
        system = bilinear_discrete(0.9, 0.1)
        reports = check_theorem4(
            system, identity(1), identity(1, var_prefix="u"),
            [[0.9]], [[0.0]], default_grid(system),
        )
        c1, c2, c3, c4 = reports
        assert c1.max_residual <= 1e-14
        assert c2.max_residual <= 1e-14
        # d f_xu/du = 0.1 x and d f_xu/dx = 0.1 u on the default box
        assert c3.max_residual == pytest.approx(0.2, abs=1e-12)
        assert c4.max_residual == pytest.approx(0.1, abs=1e-12)
        assert c3.verdict == "inconsistent"
        assert c4.verdict == "inconsistent"

    def test_continuous_system_rejected(self):
        system = builtin_system("linear")
        with pytest.raises(ValueError, match="discrete"):
            check_theorem4(system, identity(2), identity(1, var_prefix="u"),
                           np.eye(2), np.zeros((2, 1)), default_grid(system))


class TestCorollary4:
    def test_bilinear_discrete_field_and_details(self):
        system = bilinear_discrete(0.9, 0.1)
        report = check_corollary4(system, identity(1), default_grid(system))
        assert report.condition == "COR4-FXU"
        assert report.max_residual == pytest.approx(0.2, abs=1e-12)
        assert report.details["max_cross_jac_x"] == pytest.approx(0.1, abs=1e-12)
        assert report.details["max_cross_jac_u"] == pytest.approx(0.2, abs=1e-12)

    def test_discretization_induced_cross_term_small(self):
        system = builtin_system("duffing-forced", delta=0.5)
        grid_kwargs = dict(points_per_axis=5)
        r_coarse = check_corollary4(
            discretize(system, 0.1), identity(2),
            default_grid(discretize(system, 0.1), **grid_kwargs),
        )
        # the RK4 map mixes state and input at third order in dt here: the
        # second-order cross term (Df_x(x) - Df_x(0)) B u is state-independent
        # for this field and folds into f_u, so halving dt shrinks it ~8x
        assert 1e-5 < r_coarse.max_residual < 1e-2
        r_fine = check_corollary4(
            discretize(system, 0.05), identity(2),
            default_grid(discretize(system, 0.05), **grid_kwargs),
        )
        ratio = r_coarse.max_residual / r_fine.max_residual
        assert 6.0 < ratio < 11.0

    def test_continuous_rejected_and_inclusivity(self):
        csys = builtin_system("bilinear-scalar", a=-1.0, b=1.0)
        with pytest.raises(ValueError, match="discrete"):
            check_corollary4(csys, identity(1), default_grid(csys))
        dsys = bilinear_discrete(0.9, 0.1)
        lifted = rbf(dim=1, n_centers=3, region=[(-2, 2)], seed=0)
        with pytest.raises(ValueError, match="state-inclusive"):
            check_corollary4(dsys, lifted, default_grid(dsys))


class TestCorollary5:
    def test_constant_jacobian_consistent(self):
        system = discretize(builtin_system("linear"), 0.1)
        reports = check_corollary5(system, identity(2), default_grid(system, points_per_axis=5))
        assert [r.condition for r in reports] == ["COR5-PAIRWISE-U", "COR5-PAIRWISE-X"]
        for r in reports:
            assert r.max_residual <= 1e-12

    def test_quadratic_map_defects(self):
        system = scalar_discrete(
            lambda x: x**2, lambda u: u.copy(),
            lambda x: np.array([[2.0 * x[0]]]), lambda u: np.array([[1.0]]),
        )
        grid = EvaluationGrid(
            states=np.array([[0.0], [1.0]]), inputs=np.array([[0.0], [1.0]])
        )
        ru, rx = check_corollary5(
            system, monomials(1, 2, include_constant=False), grid, n_pairs=200
        )
        assert set(ru.points) == {"x1", "x2", "u1"}
        assert set(rx.points) == {"x1", "u1", "u2"}
        # x^2 row: next-state Jacobians differ by 2(x1^2 - x2^2) against
        # df_u/du = 1, and by 2(u1 - u2) against df_x/dx = 2 x1
        assert ru.max_residual == pytest.approx(2.0, abs=1e-12)
        assert rx.max_residual == pytest.approx(4.0, abs=1e-12)

    def test_cross_term_hypothesis(self):
        system = bilinear_discrete(0.9, 0.1)
        with pytest.raises(HypothesisViolationError, match=r"f_xu\(x, u\) = 0"):
            check_corollary5(system, identity(1), default_grid(system))


class TestCorollary6:
    def test_discretized_linear_exact(self):
        system = builtin_system("linear")
        data = generate_dataset(system, 300, seed=3, dt=0.1, kind="discrete-pairs")
        model = fit_affine(data, identity(2))
        dsys = discretize(system, 0.1)
        reports = check_corollary6(
            dsys, identity(2), model.K, model.B, default_grid(dsys, points_per_axis=5)
        )
        assert [r.condition for r in reports] == ["COR4-FXU", "COR6-B"]
        for r in reports:
            assert r.max_residual <= 1e-9
            assert r.verdict == "consistent"

    def test_quadratic_observable_needs_state_dependent_input_row(self):
        system = scalar_discrete(
            lambda x: 0.9 * x, lambda u: 0.1 * u,
            lambda x: np.array([[0.9]]), lambda u: np.array([[0.1]]),
        )
        B = np.array([[0.1], [0.0]])
        reports = check_corollary6(
            system, monomials(1, 2, include_constant=False), [[0.9, 0.0], [0.0, 0.81]],
            B, default_grid(system),
        )
        cor6 = reports[1]
        # the x^2 row wants 2*(0.9x + 0.1u)*0.1, maximal at x=2, u=1
        assert cor6.max_residual == pytest.approx(0.38, abs=1e-12)
        assert cor6.verdict == "inconsistent"

    def test_cubic_input_response_defect(self):
        system = scalar_discrete(
            lambda x: 0.9 * x, lambda u: u**3,
            lambda x: np.array([[0.9]]), lambda u: np.array([[3.0 * u[0] ** 2]]),
        )
        reports = check_corollary6(
            system, identity(1), [[0.9]], [[0.0]], default_grid(system)
        )
        assert reports[1].max_residual == pytest.approx(3.0, abs=1e-12)
        assert abs(reports[1].argmax_point["u"][0]) == pytest.approx(1.0)


class TestTheorem5:
    def setup_method(self):
        self.system = bilinear_discrete(0.9, 0.1)
        self.dict_x = identity(1)
        self.dict_xu = xu_joint_dict()

    def test_bilinear_exact_all_variants(self):
        reports = check_theorem5(
            self.system, self.dict_x, self.dict_xu, [[0.9]], [[0.1]],
            default_grid(self.system),
        )
        assert [r.condition for r in reports] == [
            "T5-C1", "T5-C2", "COR7-C1", "COR7-C2", "COR8-C1", "COR8-C2"
        ]
        for r in reports:
            assert r.max_residual <= 1e-13
            assert r.verdict == "consistent"

    def test_wrong_cross_operator_hits_input_conditions_only(self):
        reports = check_theorem5(
            self.system, self.dict_x, self.dict_xu, [[0.9]], [[0.0]],
            default_grid(self.system),
        )
        by_id = {r.condition: r for r in reports}
        for cid in ("T5-C1", "COR7-C1", "COR8-C1"):
            assert by_id[cid].max_residual <= 1e-13
        for cid in ("T5-C2", "COR7-C2", "COR8-C2"):
            assert by_id[cid].max_residual == pytest.approx(0.2, abs=1e-12)

    def test_t5_and_cor7_agree_under_hypothesis(self):
        reports = check_theorem5(
            self.system, self.dict_x, self.dict_xu, [[0.7]], [[0.3]],
            default_grid(self.system, points_per_axis=5),
        )
        by_id = {r.condition: r for r in reports}
        assert np.allclose(
            by_id["T5-C1"].residuals, by_id["COR7-C1"].residuals, atol=1e-14
        )
        assert np.array_equal(
            by_id["T5-C2"].residuals, by_id["COR7-C2"].residuals
        )

    def test_cross_dictionary_hypothesis_drops_variants(self):
        bad = CallableJointDictionary(
            1, 1, ["x1*u1+x1"],
            lambda x, u: np.array([x[0] * u[0] + x[0]]),
            lambda x, u: np.array([[u[0] + 1.0]]),
            lambda x, u: np.array([[x[0]]]),
        )
        reports = check_theorem5(
            self.system, self.dict_x, bad, [[0.9]], [[0.1]],
            default_grid(self.system),
        )
        assert [r.condition for r in reports] == ["T5-C1", "T5-C2"]
        for r in reports:
            assert "COR7/COR8" in r.note
            assert "psi_xu(x, 0)" in r.note

    def test_continuous_system_rejected(self):
        csys = builtin_system("bilinear-scalar", a=-1.0, b=1.0)
        with pytest.raises(ValueError, match="discrete"):
            check_theorem5(csys, self.dict_x, self.dict_xu, [[0.9]], [[0.1]],
                           default_grid(csys))


class TestSummarize:
    def _mixed_reports(self):
        bil = builtin_system("bilinear-scalar", a=-1.0, b=1.0)
        grid = default_grid(bil, points_per_axis=3)
        r_cor1 = check_corollary1(bil, identity(1), grid)
        r_t3 = check_theorem3(bil, identity(1), xu_joint_dict(), [[-1.0]], [[1.0]], grid)
        return [r_t3[1], r_cor1, r_t3[0]]

    def test_rows_follow_canonical_order(self):
        summary = summarize(self._mixed_reports())
        assert [r.condition for r in summary.reports] == ["COR1-FXU", "T3-C1", "T3-C2"]
        order = {cid: i for i, cid in enumerate(CONDITION_IDS)}
        indices = [order[r.condition] for r in summary.reports]
        assert indices == sorted(indices)

    def test_overall_verdict_and_qualifier(self):
        summary = summarize(self._mixed_reports())
        assert summary.overall_verdict == "inconsistent"
        assert "does not establish" in summary.qualifier
        text = summary.to_text()
        assert "overall: inconsistent" in text
        assert NECESSITY_QUALIFIER in text

    def test_all_consistent_overall(self):
        bil = builtin_system("bilinear-scalar", a=-1.0, b=1.0)
        grid = default_grid(bil, points_per_axis=3)
        reports = check_theorem3(bil, identity(1), xu_joint_dict(), [[-1.0]], [[1.0]], grid)
        assert summarize(reports).overall_verdict == "consistent"

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            summarize([])


class TestSerialization:
    def _reports(self):
        system = bilinear_discrete(0.9, 0.1)
        reports = check_theorem5(system, identity(1), xu_joint_dict(),
                                 [[0.9]], [[0.0]], default_grid(system, points_per_axis=3))
        reports.append(check_corollary4(system, identity(1),
                                        default_grid(system, points_per_axis=3)))
        return reports

    def test_json_round_trip(self, tmp_path):
        reports = self._reports()
        path = write_reports_json(reports, tmp_path / "reports.json")
        loaded = read_reports_json(path)
        assert len(loaded) == len(reports)
        for orig, back in zip(reports, loaded):
            assert back.condition == orig.condition
            assert back.tolerance == orig.tolerance
            assert back.verdict == orig.verdict
            assert np.array_equal(back.residuals, orig.residuals)
            for role in orig.points:
                assert np.array_equal(back.points[role], orig.points[role])
            assert back.note == orig.note
            assert back.details == orig.details

    def test_json_schema_version_checked(self, tmp_path):
        path = write_reports_json(self._reports(), tmp_path / "reports.json")
        doc = path.read_text().replace('"schema_version": 1', '"schema_version": 99')
        path.write_text(doc)
        with pytest.raises(ValueError, match="schema_version"):
            read_reports_json(path)

    def test_csv_round_trip(self, tmp_path):
        reports = self._reports()
        summary = summarize(reports)
        path = write_summary_csv(summary, tmp_path / "summary.csv")
        rows = read_summary_csv(path)
        assert [r["condition"] for r in rows] == [r.condition for r in summary.reports]
        for row, rep in zip(rows, summary.reports):
            assert row["max_residual"] == rep.max_residual  # repr round-trips exactly
            assert row["mean_residual"] == rep.mean_residual
            assert row["verdict"] == rep.verdict
            assert row["tolerance"] == rep.tolerance
            for role, val in rep.argmax_point.items():
                assert row["argmax"][role] == pytest.approx(val, abs=0)


class TestGridRefinement:
    def test_max_residual_monotone_under_refinement(self):
        bil = builtin_system("bilinear-scalar", a=-1.0, b=1.0)
        maxima = []
        for pts in (5, 9, 17):
            grid = default_grid(bil, points_per_axis=pts)
            maxima.append(check_corollary1(bil, identity(1), grid).max_residual)
        assert maxima[0] <= maxima[1] <= maxima[2]

        duff = builtin_system("duffing-forced", delta=0.5)
        dict_x = monomials(2, 2, include_constant=False)
        t2_max = []
        for pts in (3, 5, 9):
            grid = default_grid(duff, points_per_axis=pts)
            reports = check_theorem2(duff, dict_x, identity(1, var_prefix="u"),
                                     np.zeros((5, 5)), np.zeros((5, 1)), grid)
            t2_max.append(reports[2].max_residual)
        assert t2_max[0] <= t2_max[1] <= t2_max[2]
