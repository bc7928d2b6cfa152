"""Dynamical-consistency conditions as residual fields over state-input grids.

Each condition is a chain-rule identity that an (operator, dictionary) pair
must satisfy to represent a given system. The checkers evaluate the defect of
one identity at every grid point and report the residual field with its max,
mean, and the point of worst violation. All conditions are necessary only: a
consistent verdict never establishes that a lifted representation exists.

Condition identifiers form a closed set (CONDITION_IDS). The DEF1-*/DEF2-*
conditions test a fitted model's represented dynamics directly; the T*/COR*
conditions test operator matrices against a system's decomposition pieces
f_x, f_u, f_xu and the dictionary Jacobians, and come in continuous
(T2/T3/COR1-3 and the eigen condition) and discrete (T4/T5/COR4-8) families.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import ControlledSystem, EvaluationGrid
from .observables import Dictionary, JointDictionary

__all__ = [
    "CONDITION_IDS",
    "DEFAULT_TOLERANCE",
    "NECESSITY_QUALIFIER",
    "ConsistencyReport",
    "ConsistencySummary",
    "HypothesisViolationError",
    "check_def1",
    "check_def2",
    "check_def2_joint",
    "check_theorem2",
    "check_corollary1",
    "check_corollary2",
    "check_corollary3_kma",
    "check_theorem3",
    "check_kaiser",
    "check_theorem4",
    "check_corollary4",
    "check_corollary5",
    "check_corollary6",
    "check_theorem5",
    "summarize",
    "write_reports_json",
    "read_reports_json",
    "write_summary_csv",
    "read_summary_csv",
    "REPORT_SCHEMA_VERSION",
]

CONDITION_IDS = (
    "DEF1-AUTON", "DEF1-CTRL", "DEF1-JOINT",
    "DEF2-AUTON", "DEF2-CTRL-X", "DEF2-CTRL-U", "DEF2-JOINT-X", "DEF2-JOINT-U",
    "T2-C1", "T2-C2", "T2-C3",
    "COR1-FXU", "COR2-PAIRWISE",
    "COR3-KMA-B", "COR3-KMA-L",
    "T3-C1", "T3-C2",
    "KAISER",
    "T4-C1", "T4-C2", "T4-C3", "T4-C4",
    "COR4-FXU", "COR5-PAIRWISE-U", "COR5-PAIRWISE-X",
    "COR6-B",
    "T5-C1", "T5-C2",
    "COR7-C1", "COR7-C2",
    "COR8-C1", "COR8-C2",
)

DEFAULT_TOLERANCE = 1e-6
REPORT_SCHEMA_VERSION = 1

# exact-representation rounding sits below this; genuine violations far above
_HYPOTHESIS_TOL = 1e-8

NECESSITY_QUALIFIER = (
    "Necessary conditions only: a consistent verdict does not establish "
    "that a lifted representation exists."
)


def _fmt_where(where) -> str:
    if isinstance(where, tuple):
        return "(" + ", ".join(_fmt_where(w) for w in where) + ")"
    arr = np.asarray(where, dtype=float)
    if arr.ndim == 0:
        return f"{float(arr):g}"
    return "[" + ", ".join(f"{v:g}" for v in arr.ravel()) + "]"


class HypothesisViolationError(ValueError):
    """A checker's standing hypothesis fails on the supplied system/dictionary."""

    def __init__(self, hypothesis: str, max_violation: float, where=None):
        self.hypothesis = hypothesis
        self.max_violation = float(max_violation)
        loc = f" (worst at {_fmt_where(where)})" if where is not None else ""
        super().__init__(
            f"hypothesis violated: {hypothesis}; "
            f"max violation {self.max_violation:.6g}{loc}"
        )


@dataclass
class ConsistencyReport:
    """Residual field of one condition over its evaluation points.

    points maps role names to aligned (P, dim) arrays; the roles depend on
    the condition ("x", "u" for grid conditions, "x1"/"x2"/"u1"/"u2" for
    the pairwise ones). verdict is consistent iff max_residual <= tolerance.
    """

    condition: str
    tolerance: float
    points: dict
    residuals: np.ndarray
    note: str | None = None
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.condition not in CONDITION_IDS:
            raise ValueError(f"unknown condition id {self.condition!r}")
        self.residuals = np.asarray(self.residuals, dtype=float).ravel()
        if self.residuals.size == 0:
            raise ValueError("a report needs at least one evaluation point")
        self.points = {k: np.atleast_2d(np.asarray(v, dtype=float)) for k, v in self.points.items()}
        for role, arr in self.points.items():
            if arr.shape[0] != self.residuals.size:
                raise ValueError(
                    f"points[{role!r}] has {arr.shape[0]} rows for "
                    f"{self.residuals.size} residuals"
                )

    @property
    def n_points(self) -> int:
        return self.residuals.size

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residuals))

    @property
    def mean_residual(self) -> float:
        return float(np.mean(self.residuals))

    @property
    def argmax_index(self) -> int:
        return int(np.argmax(self.residuals))

    @property
    def argmax_point(self) -> dict:
        i = self.argmax_index
        return {role: arr[i].copy() for role, arr in self.points.items()}

    @property
    def verdict(self) -> str:
        return "consistent" if self.max_residual <= self.tolerance else "inconsistent"

    def to_dict(self) -> dict:
        return {
            "condition": self.condition,
            "tolerance": self.tolerance,
            "verdict": self.verdict,
            "max_residual": self.max_residual,
            "mean_residual": self.mean_residual,
            "argmax_point": {k: v.tolist() for k, v in self.argmax_point.items()},
            "n_points": self.n_points,
            "points": {k: v.tolist() for k, v in self.points.items()},
            "residual_field": self.residuals.tolist(),
            "note": self.note,
            "details": self.details,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConsistencyReport":
        return cls(
            condition=d["condition"],
            tolerance=float(d["tolerance"]),
            points={k: np.asarray(v, dtype=float) for k, v in d["points"].items()},
            residuals=np.asarray(d["residual_field"], dtype=float),
            note=d.get("note"),
            details=d.get("details", {}),
        )

    def __repr__(self):
        return (
            f"ConsistencyReport({self.condition}, max={self.max_residual:.3g}, "
            f"{self.verdict})"
        )


# -- shared helpers --------------------------------------------------------------


def _inf(arr) -> float:
    arr = np.asarray(arr, dtype=float)
    return float(np.max(np.abs(arr))) if arr.size else 0.0


def _fx(system, x):
    return np.asarray(system.f_x(np.asarray(x, dtype=float)), dtype=float)


def _fu(system, u):
    return np.asarray(system.f_u(np.asarray(u, dtype=float)), dtype=float)


def _fxu(system, x, u):
    return np.asarray(
        system.f_xu(np.asarray(x, dtype=float), np.asarray(u, dtype=float)), dtype=float
    )


def _product_points(grid: EvaluationGrid):
    """All (x, u) combinations as aligned arrays."""
    ns, ni = grid.states.shape[0], grid.inputs.shape[0]
    X = np.repeat(grid.states, ni, axis=0)
    U = np.tile(grid.inputs, (ns, 1))
    return X, U

def _require_time_kind(system: ControlledSystem, kind: str, checker: str):
    if system.time_kind != kind:
        raise ValueError(f"{checker} applies to {kind}-time systems, got {system.time_kind}")


def _require_state_inclusive(dict_x: Dictionary, checker: str):
    if not dict_x.state_inclusive:
        raise ValueError(
            f"{checker} is inapplicable: the dictionary is not state-inclusive "
            "(it must contain every coordinate observable)"
        )


def _check_sep_hypotheses(system, dict_u, grid, tol=_HYPOTHESIS_TOL):
    """Hypotheses shared by the separable-formulation conditions."""
    v = _inf(_fu(system, np.zeros(system.input_dim)))
    if v > tol:
        raise HypothesisViolationError("f_u(0) = 0", v)
    u0 = np.zeros(system.input_dim)
    worst_x, worst_v = None, 0.0
    for x in grid.states:
        v = _inf(_fxu(system, x, u0))
        if v > worst_v:
            worst_x, worst_v = x, v
    if worst_v > tol:
        raise HypothesisViolationError("f_xu(x, 0) = 0", worst_v, where=worst_x)
    x0 = np.zeros(system.state_dim)
    worst_u, worst_v = None, 0.0
    for u in grid.inputs:
        v = _inf(_fxu(system, x0, u))
        if v > worst_v:
            worst_u, worst_v = u, v
    if worst_v > tol:
        raise HypothesisViolationError("f_xu(0, u) = 0", worst_v, where=worst_u)
    if dict_u is not None:
        v = _inf(dict_u.evaluate(np.zeros(dict_u.input_dim)))
        if v > tol:
            raise HypothesisViolationError("psi_u(0) = 0", v)


def _check_fxu_vanishes(system, grid, tol=_HYPOTHESIS_TOL):
    X, U = _product_points(grid)
    worst, worst_at = 0.0, None
    for x, u in zip(X, U):
        v = _inf(_fxu(system, x, u))
        if v > worst:
            worst, worst_at = v, (x, u)
    if worst > tol:
        raise HypothesisViolationError("f_xu(x, u) = 0", worst, where=worst_at)


def _sample_pair_indices(grid, n_pairs, seed, n_index_sets):
    rng = np.random.default_rng(seed)
    ns, ni = grid.states.shape[0], grid.inputs.shape[0]
    out = []
    for kind in n_index_sets:
        size = ns if kind == "x" else ni
        out.append(rng.integers(0, size, size=n_pairs))
    return out


# -- definition-level checks -------------------------------------------------------


def check_def1(system: ControlledSystem, model, grid: EvaluationGrid,
               u_dot=None, tolerance: float = DEFAULT_TOLERANCE) -> ConsistencyReport:
    """Compare a continuous model's represented lift rate with the chain rule.

    The residual is || model rate - J_psi(x) f(x, u) || at each point, with
    the input-rate transport term J_u_psi udot added to both sides when the
    model's observables depend on the input (udot must then be supplied as a
    constant array or a callable (x, u) -> udot).
    """
    _require_time_kind(system, "continuous", "check_def1")
    if model.time_kind != "continuous":
        raise ValueError("check_def1 needs a continuous-time model")

    if model.variant == "eigen" and model.joint_observables:
        if u_dot is None:
            raise ValueError(
                "model observables depend on the input: supply u_dot "
                "(a constant array or a callable (x, u) -> udot) to evaluate "
                "the transport term"
            )
        udot_fn = u_dot if callable(u_dot) else (lambda x, u: np.asarray(u_dot, dtype=float))
        X, U = _product_points(grid)
        res = np.empty(len(X))
        for i, (x, u) in enumerate(zip(X, U)):
            ud = np.asarray(udot_fn(x, u), dtype=float)
            lhs = model.observe_jac_x(x, u) @ system.evaluate(x, u) + model.observe_jac_u(x, u) @ ud
            res[i] = _inf(model.rate(x, u, u_dot=ud) - lhs)
        return ConsistencyReport("DEF1-JOINT", tolerance, {"x": X, "u": U}, res)

    if model.variant == "affine" and model.B is None:
        u0 = np.zeros(system.input_dim)
        res = np.empty(len(grid.states))
        for i, x in enumerate(grid.states):
            truth = model.dict_x.jacobian(x) @ system.evaluate(x, u0)
            res[i] = _inf(model.rate(x, u0) - truth)
        return ConsistencyReport("DEF1-AUTON", tolerance, {"x": grid.states}, res)

    X, U = _product_points(grid)
    res = np.empty(len(X))
    if model.variant == "eigen":
        for i, (x, u) in enumerate(zip(X, U)):
            truth = model.observe_jac_x(x, u) @ system.evaluate(x, u)
            res[i] = _inf(model.rate(x, u) - truth)
    else:
        for i, (x, u) in enumerate(zip(X, U)):
            truth = model.dict_x.jacobian(x) @ system.evaluate(x, u)
            res[i] = _inf(model.rate(x, u) - truth)
    return ConsistencyReport("DEF1-CTRL", tolerance, {"x": X, "u": U}, res)


def check_def2(system: ControlledSystem, model, grid: EvaluationGrid,
               tolerance: float = DEFAULT_TOLERANCE) -> list[ConsistencyReport]:
    """Compare a discrete model's next-step lift derivatives with chain-rule truth.

    The x-identity residual is || d(model lift_next)/dx - J_psi(f(x,u)) df/dx ||
    and likewise in u; an autonomous model (no input channel) yields the single
    zero-input x-identity report.
    """
    _require_time_kind(system, "discrete", "check_def2")
    if model.time_kind != "discrete":
        raise ValueError("check_def2 needs a discrete-time model")

    if model.variant == "affine" and model.B is None:
        u0 = np.zeros(system.input_dim)
        res = np.empty(len(grid.states))
        for i, x in enumerate(grid.states):
            x_next = system.evaluate(x, u0)
            truth = model.dict_x.jacobian(x_next) @ system.jacobian_x(x, u0)
            res[i] = _inf(model.lift_next_jac_x(x, u0) - truth)
        return [ConsistencyReport("DEF2-AUTON", tolerance, {"x": grid.states}, res)]

    X, U = _product_points(grid)
    res_x = np.empty(len(X))
    res_u = np.empty(len(X))
    for i, (x, u) in enumerate(zip(X, U)):
        x_next = system.evaluate(x, u)
        J_next = model.dict_x.jacobian(x_next)
        res_x[i] = _inf(model.lift_next_jac_x(x, u) - J_next @ system.jacobian_x(x, u))
        res_u[i] = _inf(model.lift_next_jac_u(x, u) - J_next @ system.jacobian_u(x, u))
    return [
        ConsistencyReport("DEF2-CTRL-X", tolerance, {"x": X, "u": U}, res_x),
        ConsistencyReport("DEF2-CTRL-U", tolerance, {"x": X, "u": U}, res_u),
    ]


def check_def2_joint(system: ControlledSystem, joint_dict: JointDictionary, K,
                     grid: EvaluationGrid, input_evolution=None,
                     tolerance: float = DEFAULT_TOLERANCE) -> list[ConsistencyReport]:
    """Next-step derivative identities for a lift of joint observables psi(x, u).

    K is the one-step matrix on the joint dictionary. Because psi at step
    k+1 takes an input argument, the u-identity carries a transport term
    J_u_psi(x_{k+1}, u_{k+1}) du_{k+1}/du_k that is only evaluable when the
    input dynamics are modeled: pass input_evolution = (map, jacobian) with
    map(u) -> u_{k+1} and jacobian(u) -> du_{k+1}/du_k. Without it, psi at
    step k+1 is evaluated at the held input u_k, the transport term is
    omitted, and both reports carry explanatory notes; u_{k+1} = u_k is
    never assumed for the derivative itself.
    """
    _require_time_kind(system, "discrete", "check_def2_joint")
    K = np.asarray(K, dtype=float)
    if K.shape != (joint_dict.size, joint_dict.size):
        raise ValueError(
            f"K must be {joint_dict.size}x{joint_dict.size} for this "
            f"dictionary, got {K.shape}"
        )
    u_map = u_jac = None
    if input_evolution is not None:
        u_map, u_jac = input_evolution

    X, U = _product_points(grid)
    res_x = np.empty(len(X))
    res_u = np.empty(len(X))
    for i, (x, u) in enumerate(zip(X, U)):
        x_next = system.evaluate(x, u)
        u_next = np.asarray(u_map(u), dtype=float) if u_map is not None else u
        Jx_next = joint_dict.jacobian_x(x_next, u_next)
        lhs_x = K @ joint_dict.jacobian_x(x, u)
        lhs_u = K @ joint_dict.jacobian_u(x, u)
        rhs_x = Jx_next @ system.jacobian_x(x, u)
        rhs_u = Jx_next @ system.jacobian_u(x, u)
        if u_jac is not None:
            rhs_u = rhs_u + joint_dict.jacobian_u(x_next, u_next) @ np.asarray(
                u_jac(u), dtype=float
            )
        res_x[i] = _inf(lhs_x - rhs_x)
        res_u[i] = _inf(lhs_u - rhs_u)

    note_x = note_u = None
    if input_evolution is None:
        note_x = (
            "input dynamics unmodeled: psi at step k+1 evaluated at the held "
            "input u_k"
        )
        note_u = note_x + "; transport term J_u_psi du_{k+1}/du_k not evaluated"
    return [
        ConsistencyReport("DEF2-JOINT-X", tolerance, {"x": X, "u": U}, res_x, note=note_x),
        ConsistencyReport("DEF2-JOINT-U", tolerance, {"x": X, "u": U}, res_u, note=note_u),
    ]


# -- continuous separable family (T2, COR1-3) ------------------------------------


def check_theorem2(system: ControlledSystem, dict_x: Dictionary, dict_u: Dictionary,
                   L_x, L_u, grid: EvaluationGrid,
                   tolerance: float = DEFAULT_TOLERANCE) -> list[ConsistencyReport]:
    """Continuous separable-formulation conditions.

    T2-C1: || J_psi_x(x) f_x(x) - L_x psi_x(x) ||            over states
    T2-C2: || J_psi_x(0) f_u(u) - L_u psi_u(u) ||            over inputs
    T2-C3: || (J_psi_x(x) - J_psi_x(0)) f_u(u)
              + J_psi_x(x) f_xu(x, u) ||                     over the product

    Hypotheses f_u(0) = 0, f_xu(x, 0) = f_xu(0, u) = 0, psi_u(0) = 0 are
    verified first and raise HypothesisViolationError when broken.
    """
    _require_time_kind(system, "continuous", "check_theorem2")
    _check_sep_hypotheses(system, dict_u, grid)
    L_x = np.asarray(L_x, dtype=float)
    L_u = np.asarray(L_u, dtype=float)
    J0 = dict_x.jacobian(np.zeros(system.state_dim))

    res1 = np.empty(len(grid.states))
    for i, x in enumerate(grid.states):
        res1[i] = _inf(dict_x.jacobian(x) @ _fx(system, x) - L_x @ dict_x.evaluate(x))

    res2 = np.empty(len(grid.inputs))
    for i, u in enumerate(grid.inputs):
        res2[i] = _inf(J0 @ _fu(system, u) - L_u @ dict_u.evaluate(u))

    X, U = _product_points(grid)
    res3 = np.empty(len(X))
    for i, (x, u) in enumerate(zip(X, U)):
        Jx = dict_x.jacobian(x)
        res3[i] = _inf((Jx - J0) @ _fu(system, u) + Jx @ _fxu(system, x, u))

    return [
        ConsistencyReport("T2-C1", tolerance, {"x": grid.states}, res1),
        ConsistencyReport("T2-C2", tolerance, {"u": grid.inputs}, res2),
        ConsistencyReport("T2-C3", tolerance, {"x": X, "u": U}, res3),
    ]


def _fxu_field_report(system, grid, condition, tolerance, with_jacobians=False,
                      note=None) -> ConsistencyReport:
    X, U = _product_points(grid)
    res = np.empty(len(X))
    jx_max = ju_max = 0.0
    for i, (x, u) in enumerate(zip(X, U)):
        res[i] = _inf(_fxu(system, x, u))
        if with_jacobians:
            jx_max = max(jx_max, _inf(system.jacobian_fxu_x(x, u)))
            ju_max = max(ju_max, _inf(system.jacobian_fxu_u(x, u)))
    details = {}
    if with_jacobians:
        details = {"max_cross_jac_x": jx_max, "max_cross_jac_u": ju_max}
    return ConsistencyReport(condition, tolerance, {"x": X, "u": U}, res,
                             note=note, details=details)


def check_corollary1(system: ControlledSystem, dict_x: Dictionary, grid: EvaluationGrid,
                     tolerance: float = DEFAULT_TOLERANCE) -> ConsistencyReport:
    """State-inclusive separable representations force f_xu = 0 (continuous).

    The residual field is || f_xu(x, u) || itself; an inconsistent verdict
    means no consistent separable representation with this dictionary exists.
    """
    _require_time_kind(system, "continuous", "check_corollary1")
    _require_state_inclusive(dict_x, "check_corollary1")
    return _fxu_field_report(system, grid, "COR1-FXU", tolerance)


def check_corollary2(system: ControlledSystem, dict_x: Dictionary, grid: EvaluationGrid,
                     n_pairs: int = 200, seed: int = 0,
                     tolerance: float = DEFAULT_TOLERANCE) -> ConsistencyReport:
    """Pairwise x-independence of the input response (continuous).

    Residual || (J_psi_x(x1) - J_psi_x(x2)) f_u(u) || over seeded random
    (x1, x2, u) triples drawn from the grid. Hypothesis: f_xu = 0.
    """
    _require_time_kind(system, "continuous", "check_corollary2")
    _check_fxu_vanishes(system, grid)
    i1, i2, iu = _sample_pair_indices(grid, n_pairs, seed, ("x", "x", "u"))
    X1, X2, U = grid.states[i1], grid.states[i2], grid.inputs[iu]
    res = np.empty(n_pairs)
    for i, (x1, x2, u) in enumerate(zip(X1, X2, U)):
        res[i] = _inf((dict_x.jacobian(x1) - dict_x.jacobian(x2)) @ _fu(system, u))
    return ConsistencyReport(
        "COR2-PAIRWISE", tolerance, {"x1": X1, "x2": X2, "u": U}, res
    )


def check_corollary3_kma(system: ControlledSystem, dict_x: Dictionary, L, B,
                         grid: EvaluationGrid, n_pairs: int = 200, seed: int = 0,
                         tolerance: float = DEFAULT_TOLERANCE) -> list[ConsistencyReport]:
    """Conditions for the continuous affine formulation (constant B).

    Returns the inherited COR1/COR2 checks plus
    COR3-KMA-B: || J_psi_x(0) df_u/du(u) - B ||     over inputs
    COR3-KMA-L: || J_psi_x(x) f_x(x) - L psi_x(x) || over states

    When f_xu is not identically zero the pairwise check's hypothesis fails;
    that report is skipped (the cross-term violation is already captured by
    COR1-FXU, which carries a note).
    """
    _require_time_kind(system, "continuous", "check_corollary3_kma")
    _require_state_inclusive(dict_x, "check_corollary3_kma")
    L = np.asarray(L, dtype=float)
    B = np.asarray(B, dtype=float)

    reports = []
    try:
        _check_fxu_vanishes(system, grid)
        cross_ok = True
    except HypothesisViolationError:
        cross_ok = False
    note = None if cross_ok else (
        "cross term nonzero: pairwise condition skipped (its hypothesis fails)"
    )
    reports.append(
        _fxu_field_report(system, grid, "COR1-FXU", tolerance, note=note)
    )
    if cross_ok:
        reports.append(check_corollary2(system, dict_x, grid, n_pairs, seed, tolerance))

    J0 = dict_x.jacobian(np.zeros(system.state_dim))
    res_b = np.empty(len(grid.inputs))
    for i, u in enumerate(grid.inputs):
        res_b[i] = _inf(J0 @ system.jacobian_fu(u) - B)
    reports.append(ConsistencyReport("COR3-KMA-B", tolerance, {"u": grid.inputs}, res_b))

    res_l = np.empty(len(grid.states))
    for i, x in enumerate(grid.states):
        res_l[i] = _inf(dict_x.jacobian(x) @ _fx(system, x) - L @ dict_x.evaluate(x))
    reports.append(ConsistencyReport("COR3-KMA-L", tolerance, {"x": grid.states}, res_l))
    return reports


def check_theorem3(system: ControlledSystem, dict_x: Dictionary,
                   dict_xu: JointDictionary, L_x, L_xu, grid: EvaluationGrid,
                   tolerance: float = DEFAULT_TOLERANCE) -> list[ConsistencyReport]:
    """Continuous joint-formulation conditions.

    The decomposition here is f = f_x + cross with cross(x, 0) = 0; the
    system's f_u piece is folded into the cross term (cross = f_u + f_xu),
    which keeps cross(x, 0) = 0 automatically.

    T3-C1: || J_psi_x(x) f_x(x) - L_x psi_x(x) ||           over states
    T3-C2: || J_psi_x(x) cross(x, u) - L_xu psi_xu(x, u) || over the product

    Hypothesis: psi_xu(x, 0) = 0 on the grid.
    """
    _require_time_kind(system, "continuous", "check_theorem3")
    L_x = np.asarray(L_x, dtype=float)
    L_xu = np.asarray(L_xu, dtype=float)

    u0 = np.zeros(system.input_dim)
    worst, worst_x = 0.0, None
    for x in grid.states:
        v = _inf(dict_xu.evaluate(x, u0))
        if v > worst:
            worst, worst_x = v, x
    if worst > _HYPOTHESIS_TOL:
        raise HypothesisViolationError("psi_xu(x, 0) = 0", worst, where=worst_x)

    res1 = np.empty(len(grid.states))
    for i, x in enumerate(grid.states):
        res1[i] = _inf(dict_x.jacobian(x) @ _fx(system, x) - L_x @ dict_x.evaluate(x))

    X, U = _product_points(grid)
    res2 = np.empty(len(X))
    for i, (x, u) in enumerate(zip(X, U)):
        cross = _fu(system, u) + _fxu(system, x, u)
        res2[i] = _inf(dict_x.jacobian(x) @ cross - L_xu @ dict_xu.evaluate(x, u))

    return [
        ConsistencyReport("T3-C1", tolerance, {"x": grid.states}, res1),
        ConsistencyReport("T3-C2", tolerance, {"x": X, "u": U}, res2),
    ]


def check_kaiser(system: ControlledSystem, eigendict, Lam, grid: EvaluationGrid,
                 tolerance: float = DEFAULT_TOLERANCE) -> ConsistencyReport:
    """Diagonal eigen-formulation condition (continuous).

    Residual || J_x_psi(x, u) f(x, u) - Lambda psi(x, u) || over the grid.
    The input-rate transport term appears identically on both sides of the
    defining relation and cancels, so it is not part of this condition.
    Lambda may be given as a vector of eigenvalues or a strictly diagonal
    matrix.
    """
    _require_time_kind(system, "continuous", "check_kaiser")
    Lam = np.asarray(Lam, dtype=float)
    if Lam.ndim == 2:
        if Lam.shape[0] != Lam.shape[1] or _inf(Lam - np.diag(np.diag(Lam))) > 0:
            raise ValueError("Lambda must be strictly diagonal")
        lam = np.diag(Lam).copy()
    elif Lam.ndim == 1:
        lam = Lam
    else:
        raise ValueError("Lambda must be a vector or a diagonal matrix")
    joint = isinstance(eigendict, JointDictionary)
    if lam.shape[0] != eigendict.size:
        raise ValueError(
            f"need one eigenvalue per observable ({eigendict.size}), got {lam.shape[0]}"
        )

    X, U = _product_points(grid)
    res = np.empty(len(X))
    for i, (x, u) in enumerate(zip(X, U)):
        if joint:
            psi, J = eigendict.evaluate(x, u), eigendict.jacobian_x(x, u)
        else:
            psi, J = eigendict.evaluate(x), eigendict.jacobian(x)
        res[i] = _inf(J @ system.evaluate(x, u) - lam * psi)
    return ConsistencyReport("KAISER", tolerance, {"x": X, "u": U}, res)


# -- discrete separable family (T4, COR4-6) ---------------------------------------


def check_theorem4(system: ControlledSystem, dict_x: Dictionary, dict_u: Dictionary,
                   K_x, K_u, grid: EvaluationGrid,
                   tolerance: float = DEFAULT_TOLERANCE) -> list[ConsistencyReport]:
    """Discrete separable-formulation conditions.

    With J+ denoting J_psi_x evaluated at the relevant next state:

    T4-C1: || J+(f(x,0)) df_x/dx(x) - K_x J_psi_x(x) ||         over states
    T4-C2: || J+(f(0,u)) df_u/du(u) - K_u J_psi_u(u) ||         over inputs
    T4-C3: || (J+(f(x,u)) - J+(f(0,u))) df_u/du(u)
              + J+(f(x,u)) df_xu/du(x,u) ||                     over the product
    T4-C4: || (J+(f(x,u)) - J+(f(x,0))) df_x/dx(x)
              + J+(f(x,u)) df_xu/dx(x,u) ||                     over the product

    The restricted evaluations re-evaluate the next state at u = 0 or x = 0
    accordingly. Hypotheses as in the continuous separable case.
    """
    _require_time_kind(system, "discrete", "check_theorem4")
    _check_sep_hypotheses(system, dict_u, grid)
    K_x = np.asarray(K_x, dtype=float)
    K_u = np.asarray(K_u, dtype=float)
    x0 = np.zeros(system.state_dim)
    u0 = np.zeros(system.input_dim)

    res1 = np.empty(len(grid.states))
    for i, x in enumerate(grid.states):
        J_next = dict_x.jacobian(system.evaluate(x, u0))
        res1[i] = _inf(J_next @ system.jacobian_fx(x) - K_x @ dict_x.jacobian(x))

    res2 = np.empty(len(grid.inputs))
    for i, u in enumerate(grid.inputs):
        J_next = dict_x.jacobian(system.evaluate(x0, u))
        res2[i] = _inf(J_next @ system.jacobian_fu(u) - K_u @ dict_u.jacobian(u))

    X, U = _product_points(grid)
    res3 = np.empty(len(X))
    res4 = np.empty(len(X))
    for i, (x, u) in enumerate(zip(X, U)):
        J_full = dict_x.jacobian(system.evaluate(x, u))
        J_x0 = dict_x.jacobian(system.evaluate(x, u0))
        J_0u = dict_x.jacobian(system.evaluate(x0, u))
        res3[i] = _inf(
            (J_full - J_0u) @ system.jacobian_fu(u)
            + J_full @ system.jacobian_fxu_u(x, u)
        )
        res4[i] = _inf(
            (J_full - J_x0) @ system.jacobian_fx(x)
            + J_full @ system.jacobian_fxu_x(x, u)
        )

    return [
        ConsistencyReport("T4-C1", tolerance, {"x": grid.states}, res1),
        ConsistencyReport("T4-C2", tolerance, {"u": grid.inputs}, res2),
        ConsistencyReport("T4-C3", tolerance, {"x": X, "u": U}, res3),
        ConsistencyReport("T4-C4", tolerance, {"x": X, "u": U}, res4),
    ]


def check_corollary4(system: ControlledSystem, dict_x: Dictionary, grid: EvaluationGrid,
                     tolerance: float = DEFAULT_TOLERANCE) -> ConsistencyReport:
    """State-inclusive separable representations force f_xu = 0 (discrete).

    The residual field is || f_xu(x, u) ||; the details record the largest
    cross-term Jacobian norms in x and u, the proof's intermediate quantities.
    """
    _require_time_kind(system, "discrete", "check_corollary4")
    _require_state_inclusive(dict_x, "check_corollary4")
    return _fxu_field_report(system, grid, "COR4-FXU", tolerance, with_jacobians=True)


def check_corollary5(system: ControlledSystem, dict_x: Dictionary, grid: EvaluationGrid,
                     n_pairs: int = 200, seed: int = 0,
                     tolerance: float = DEFAULT_TOLERANCE) -> list[ConsistencyReport]:
    """Pairwise next-state independence conditions (discrete).

    Over seeded random quadruples (x1, x2, u1, u2) from the grid:

    COR5-PAIRWISE-U: || (J+(f(x1,u1)) - J+(f(x2,u1))) df_u/du(u1) ||
    COR5-PAIRWISE-X: || (J+(f(x1,u1)) - J+(f(x1,u2))) df_x/dx(x1) ||

    Hypothesis: f_xu = 0.
    """
    _require_time_kind(system, "discrete", "check_corollary5")
    _check_fxu_vanishes(system, grid)
    i1, i2, j1, j2 = _sample_pair_indices(grid, n_pairs, seed, ("x", "x", "u", "u"))
    X1, X2 = grid.states[i1], grid.states[i2]
    U1, U2 = grid.inputs[j1], grid.inputs[j2]

    res_u = np.empty(n_pairs)
    res_x = np.empty(n_pairs)
    for i in range(n_pairs):
        x1, x2, u1, u2 = X1[i], X2[i], U1[i], U2[i]
        J_11 = dict_x.jacobian(system.evaluate(x1, u1))
        res_u[i] = _inf(
            (J_11 - dict_x.jacobian(system.evaluate(x2, u1))) @ system.jacobian_fu(u1)
        )
        res_x[i] = _inf(
            (J_11 - dict_x.jacobian(system.evaluate(x1, u2))) @ system.jacobian_fx(x1)
        )
    return [
        ConsistencyReport(
            "COR5-PAIRWISE-U", tolerance, {"x1": X1, "x2": X2, "u1": U1}, res_u
        ),
        ConsistencyReport(
            "COR5-PAIRWISE-X", tolerance, {"x1": X1, "u1": U1, "u2": U2}, res_x
        ),
    ]


def check_corollary6(system: ControlledSystem, dict_x: Dictionary, K, B,
                     grid: EvaluationGrid,
                     tolerance: float = DEFAULT_TOLERANCE) -> list[ConsistencyReport]:
    """Conditions for the discrete affine formulation (constant B).

    Returns the inherited COR4-FXU check plus
    COR6-B: || J_psi_x(f(x,u)) df_u/du(u) - B ||  over the product.
    """
    _require_time_kind(system, "discrete", "check_corollary6")
    _require_state_inclusive(dict_x, "check_corollary6")
    B = np.asarray(B, dtype=float)

    reports = [_fxu_field_report(system, grid, "COR4-FXU", tolerance, with_jacobians=True)]
    X, U = _product_points(grid)
    res = np.empty(len(X))
    for i, (x, u) in enumerate(zip(X, U)):
        J_next = dict_x.jacobian(system.evaluate(x, u))
        res[i] = _inf(J_next @ system.jacobian_fu(u) - B)
    reports.append(ConsistencyReport("COR6-B", tolerance, {"x": X, "u": U}, res))
    return reports


def check_theorem5(system: ControlledSystem, dict_x: Dictionary,
                   dict_xu: JointDictionary, K_x, K_xu, grid: EvaluationGrid,
                   tolerance: float = DEFAULT_TOLERANCE) -> list[ConsistencyReport]:
    """Discrete joint-formulation conditions, with their corollary variants.

    With J+ = J_psi_x at the indicated next state and the full derivatives
    df/dx, df/du of the assembled map:

    T5-C1:   || J+(f(x,0)) df/dx(x,0)
                - (K_x J_psi_x(x) + K_xu J_x_psi_xu(x,0)) ||   over states
    T5-C2:   || J+(f(x,u)) df/du(x,u) - K_xu J_u_psi_xu(x,u) || over the product
    COR7-C1: T5-C1 without the K_xu term (it vanishes under the hypothesis
             psi_xu(x, 0) = 0)
    COR7-C2: the T5-C2 identity under the same hypothesis
    COR8-C1: || J+(f(x,0)) df_x/dx(x) - K_x J_psi_x(x) ||      over states
    COR8-C2: || J+(f(x,u)) dcross/du(x,u) - K_xu J_u_psi_xu(x,u) ||
             with cross = f_u + f_xu folded as in the continuous joint case

    The COR7/COR8 reports are produced only when psi_xu(x, 0) = 0 holds on
    the grid; otherwise the T5 reports are returned alone, with a note
    recording the per-variant hypothesis violation.
    """
    _require_time_kind(system, "discrete", "check_theorem5")
    K_x = np.asarray(K_x, dtype=float)
    K_xu = np.asarray(K_xu, dtype=float)
    u0 = np.zeros(system.input_dim)

    worst, worst_x = 0.0, None
    for x in grid.states:
        v = _inf(dict_xu.evaluate(x, u0))
        if v > worst:
            worst, worst_x = v, x
    cross_dict_ok = worst <= _HYPOTHESIS_TOL

    res_t5c1 = np.empty(len(grid.states))
    res_c7c1 = np.empty(len(grid.states))
    res_c8c1 = np.empty(len(grid.states))
    for i, x in enumerate(grid.states):
        J_next = dict_x.jacobian(system.evaluate(x, u0))
        lhs_full = J_next @ system.jacobian_x(x, u0)
        base = K_x @ dict_x.jacobian(x)
        res_t5c1[i] = _inf(lhs_full - base - K_xu @ dict_xu.jacobian_x(x, u0))
        res_c7c1[i] = _inf(lhs_full - base)
        res_c8c1[i] = _inf(J_next @ system.jacobian_fx(x) - base)

    X, U = _product_points(grid)
    res_t5c2 = np.empty(len(X))
    res_c8c2 = np.empty(len(X))
    for i, (x, u) in enumerate(zip(X, U)):
        J_next = dict_x.jacobian(system.evaluate(x, u))
        rhs = K_xu @ dict_xu.jacobian_u(x, u)
        res_t5c2[i] = _inf(J_next @ system.jacobian_u(x, u) - rhs)
        cross_du = system.jacobian_fu(u) + system.jacobian_fxu_u(x, u)
        res_c8c2[i] = _inf(J_next @ cross_du - rhs)

    reports = [
        ConsistencyReport("T5-C1", tolerance, {"x": grid.states}, res_t5c1),
        ConsistencyReport("T5-C2", tolerance, {"x": X, "u": U}, res_t5c2),
    ]
    if not cross_dict_ok:
        note = (
            f"COR7/COR8 variants skipped: hypothesis psi_xu(x, 0) = 0 fails "
            f"(max |psi_xu(x, 0)| = {worst:.3g} at x = {worst_x})"
        )
        for r in reports:
            r.note = note
        return reports

    reports.extend([
        ConsistencyReport("COR7-C1", tolerance, {"x": grid.states}, res_c7c1),
        ConsistencyReport("COR7-C2", tolerance, {"x": X, "u": U}, res_t5c2.copy()),
        ConsistencyReport("COR8-C1", tolerance, {"x": grid.states}, res_c8c1),
        ConsistencyReport("COR8-C2", tolerance, {"x": X, "u": U}, res_c8c2),
    ])
    return reports


# -- summaries and serialization ---------------------------------------------------


@dataclass
class ConsistencySummary:
    """Ordered roll-up of consistency reports with an overall verdict."""

    reports: list
    overall_verdict: str
    qualifier: str = NECESSITY_QUALIFIER

    def to_rows(self) -> list[dict]:
        rows = []
        for r in self.reports:
            rows.append({
                "condition": r.condition,
                "max_residual": r.max_residual,
                "mean_residual": r.mean_residual,
                "argmax": _format_point(r.argmax_point),
                "verdict": r.verdict,
                "tolerance": r.tolerance,
                "note": r.note or "",
            })
        return rows

    def to_text(self) -> str:
        rows = self.to_rows()
        widths = {
            "condition": max(9, *(len(r["condition"]) for r in rows)),
            "verdict": 12,
        }
        lines = [
            f"{'condition':<{widths['condition']}}  {'max':>12}  {'mean':>12}  "
            f"{'verdict':<{widths['verdict']}}  argmax"
        ]
        for r in rows:
            lines.append(
                f"{r['condition']:<{widths['condition']}}  "
                f"{r['max_residual']:>12.4e}  {r['mean_residual']:>12.4e}  "
                f"{r['verdict']:<{widths['verdict']}}  {r['argmax']}"
            )
        lines.append(f"overall: {self.overall_verdict}")
        lines.append(self.qualifier)
        return "\n".join(lines)


def _format_point(point: dict) -> str:
    parts = []
    for role in sorted(point):
        vals = ",".join(repr(float(v)) for v in np.atleast_1d(point[role]))
        parts.append(f"{role}={vals}")
    return "; ".join(parts)


def _parse_point(text: str) -> dict:
    out = {}
    if not text:
        return out
    for part in text.split("; "):
        role, vals = part.split("=", 1)
        out[role] = np.array([float(v) for v in vals.split(",")])
    return out


def summarize(reports) -> ConsistencySummary:
    """Order reports canonically and attach the overall verdict."""
    reports = list(reports)
    if not reports:
        raise ValueError("cannot summarize an empty report list")
    order = {cid: i for i, cid in enumerate(CONDITION_IDS)}
    indexed = sorted(enumerate(reports), key=lambda t: (order[t[1].condition], t[0]))
    ordered = [r for _, r in indexed]
    overall = "consistent" if all(r.verdict == "consistent" for r in ordered) else "inconsistent"
    return ConsistencySummary(ordered, overall)


def write_reports_json(reports, path) -> Path:
    """Full residual fields, one JSON document for a list of reports."""
    if isinstance(reports, ConsistencyReport):
        reports = [reports]
    doc = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "qualifier": NECESSITY_QUALIFIER,
        "reports": [r.to_dict() for r in reports],
    }
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def read_reports_json(path) -> list[ConsistencyReport]:
    doc = json.loads(Path(path).read_text())
    version = doc.get("schema_version")
    if version != REPORT_SCHEMA_VERSION:
        raise ValueError(
            f"unsupported report schema_version {version!r}; "
            f"this build reads version {REPORT_SCHEMA_VERSION}"
        )
    return [ConsistencyReport.from_dict(d) for d in doc["reports"]]


_SUMMARY_FIELDS = ("condition", "max_residual", "mean_residual", "argmax",
                   "verdict", "tolerance", "note")


def write_summary_csv(summary: ConsistencySummary, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_SUMMARY_FIELDS)
        writer.writeheader()
        for row in summary.to_rows():
            row = dict(row)
            row["max_residual"] = repr(row["max_residual"])
            row["mean_residual"] = repr(row["mean_residual"])
            row["tolerance"] = repr(row["tolerance"])
            writer.writerow(row)
    return path


def read_summary_csv(path) -> list[dict]:
    """Rows with numeric fields parsed and argmax decoded to arrays."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        out.append({
            "condition": row["condition"],
            "max_residual": float(row["max_residual"]),
            "mean_residual": float(row["mean_residual"]),
            "argmax": _parse_point(row["argmax"]),
            "verdict": row["verdict"],
            "tolerance": float(row["tolerance"]),
            "note": row["note"],
        })
    return out
