"""Fitting and evaluating lifted linear models of controlled dynamics.

Five formulations close the lifted dynamics psi_x(x_{k+1}) (discrete) or
d/dt psi_x (continuous) over a finite dictionary:

  affine      K psi_x(x) + B u
  separable   K_x psi_x(x) + K_u psi_u(u)
  joint       K_x psi_x(x) + K_xu psi_xu(x, u)   with psi_xu(x, 0) = 0
  bilinear    K(u) psi_x(x),  K(u) = sum_i psi_u_i(u) K_i
  eigen       d/dt psi(x, u) = Lambda psi(x, u) + (d psi/d u) udot

All fits are plain least squares through an orthogonal decomposition; rank
deficiency raises unless ridge > 0. Continuous-time fitting regresses the
analytic dictionary rate J_psi(x) xdot against the model right side rather
than finite-differencing psi along trajectories, which would add a noise
floor unrelated to model class.
"""

from __future__ import annotations

import numpy as np

from .dynamics import SnapshotDataset
from .numerics import RankDeficiencyError, solve_least_squares
from .observables import (
    Dictionary,
    JointDictionary,
    bilinear_cross_dictionary,
    build_dictionary,
    joint_dictionary_from_spec,
)

__all__ = [
    "KoopmanModel",
    "AffineModel",
    "SeparableModel",
    "JointModel",
    "BilinearModel",
    "EigenModel",
    "fit_affine",
    "fit_separable",
    "fit_joint",
    "fit_bilinear",
    "fit_eigen",
    "bilinear_to_joint",
    "williams_to_joint",
    "predict_step",
    "rollout",
    "RolloutResult",
    "model_residual",
    "model_to_payload",
    "model_from_payload",
    "save_model",
    "load_model",
    "MODEL_SCHEMA_VERSION",
    "VARIANTS",
]

MODEL_SCHEMA_VERSION = 1
VARIANTS = ("affine", "separable", "joint", "bilinear", "eigen")


class KoopmanModel:
    """Base for fitted lifted-dynamics models.

    Concrete models expose the represented next-step lift (discrete) or
    lift rate (continuous) together with its analytic derivatives in x and
    u; those derivatives are what the consistency definitions compare
    against chain-rule truth.
    """

    variant = "abstract"

    def __init__(self, time_kind: str, state_dim: int, input_dim: int):
        if time_kind not in ("discrete", "continuous"):
            raise ValueError(f"time_kind must be discrete or continuous, got {time_kind!r}")
        self.time_kind = time_kind
        self.state_dim = int(state_dim)
        self.input_dim = int(input_dim)
        # fit metadata
        self.training_residual: float | None = None
        self.n_samples: int | None = None
        self.ridge: float = 0.0
        self.fully_identified: bool = True
        self.notes: list[str] = []
        self.dt: float | None = None
        self.system_name: str = ""

    # -- time-kind guards ----------------------------------------------------

    def _require(self, kind: str):
        if self.time_kind != kind:
            raise ValueError(
                f"{self.variant} model is {self.time_kind}-time; "
                f"this operation needs a {kind}-time model"
            )

    # -- represented dynamics -------------------------------------------------

    def _apply(self, x, u) -> np.ndarray:
        raise NotImplementedError

    def lift(self, x) -> np.ndarray:
        """Lifted coordinates psi_x(x)."""
        return self.dict_x.evaluate(x)

    def lift_next(self, x, u) -> np.ndarray:
        """Represented psi_x(x_{k+1}) as a function of (x_k, u_k)."""
        self._require("discrete")
        return self._apply(x, u)

    def rate(self, x, u) -> np.ndarray:
        """Represented d/dt psi_x along the flow at (x, u)."""
        self._require("continuous")
        return self._apply(x, u)

    def lift_next_jac_x(self, x, u) -> np.ndarray:
        self._require("discrete")
        return self._jac_x(x, u)

    def lift_next_jac_u(self, x, u) -> np.ndarray:
        self._require("discrete")
        return self._jac_u(x, u)

    @property
    def state_inclusive(self) -> bool:
        return self.dict_x.state_inclusive

    @property
    def lifted_dim(self) -> int:
        return self.dict_x.size

    # -- serialization scaffold -----------------------------------------------

    def _metadata(self) -> dict:
        return {
            "training_residual": self.training_residual,
            "n_samples": self.n_samples,
            "ridge": self.ridge,
            "fully_identified": self.fully_identified,
            "notes": list(self.notes),
            "dt": self.dt,
            "system_name": self.system_name,
        }

    def _restore_metadata(self, meta: dict):
        self.training_residual = meta.get("training_residual")
        self.n_samples = meta.get("n_samples")
        self.ridge = float(meta.get("ridge", 0.0))
        self.fully_identified = bool(meta.get("fully_identified", True))
        self.notes = list(meta.get("notes", []))
        self.dt = meta.get("dt")
        self.system_name = meta.get("system_name", "")

    def __repr__(self):
        return (
            f"{type(self).__name__}(time_kind={self.time_kind!r}, "
            f"lifted_dim={self.lifted_dim}, input_dim={self.input_dim})"
        )


def _require_spec(d, what: str):
    if d.spec is None:
        raise ValueError(
            f"{what} was built from raw callables and has no serializable spec; "
            "rebuild it from a spec-backed dictionary to save this model"
        )
    return d.spec


class AffineModel(KoopmanModel):
    """psi(x_{k+1}) = K psi(x_k) + B u_k (or d/dt psi = K psi + B u).

    B = None represents a purely autonomous lift (no input channel); the
    input argument of lift_next/rate is then ignored.
    """

    variant = "affine"

    def __init__(self, dictionary: Dictionary, K, B, time_kind: str, input_dim: int | None = None):
        K = np.asarray(K, dtype=float)
        N = dictionary.size
        if K.shape != (N, N):
            raise ValueError(f"K must be {N}x{N} for this dictionary, got {K.shape}")
        if B is not None:
            B = np.asarray(B, dtype=float)
            if B.ndim != 2 or B.shape[0] != N:
                raise ValueError(f"B must have {N} rows, got shape {B.shape}")
            input_dim = B.shape[1]
        elif input_dim is None:
            input_dim = 0
        super().__init__(time_kind, dictionary.input_dim, input_dim)
        self.dict_x = dictionary
        self.K = K
        self.B = B

    def _apply(self, x, u):
        out = self.K @ self.dict_x.evaluate(x)
        if self.B is not None:
            out = out + self.B @ np.asarray(u, dtype=float)
        return out

    def _jac_x(self, x, u):
        return self.K @ self.dict_x.jacobian(x)

    def _jac_u(self, x, u):
        if self.B is None:
            raise ValueError("autonomous affine model has no input channel")
        return self.B.copy()

    def to_payload(self) -> dict:
        return {
            "schema_version": MODEL_SCHEMA_VERSION,
            "variant": self.variant,
            "time_kind": self.time_kind,
            "state_dim": self.state_dim,
            "input_dim": self.input_dim,
            "dictionaries": {"state": _require_spec(self.dict_x, "state dictionary")},
            "operators": {
                "K": self.K.tolist(),
                "B": None if self.B is None else self.B.tolist(),
            },
            "metadata": self._metadata(),
        }


class SeparableModel(KoopmanModel):
    """psi_x(x_{k+1}) = K_x psi_x(x_k) + K_u psi_u(u_k)."""

    variant = "separable"

    def __init__(self, dict_x: Dictionary, dict_u: Dictionary, K_x, K_u, time_kind: str):
        K_x = np.asarray(K_x, dtype=float)
        K_u = np.asarray(K_u, dtype=float)
        if K_x.shape != (dict_x.size, dict_x.size):
            raise ValueError(f"K_x must be {dict_x.size}x{dict_x.size}, got {K_x.shape}")
        if K_u.shape != (dict_x.size, dict_u.size):
            raise ValueError(f"K_u must be {dict_x.size}x{dict_u.size}, got {K_u.shape}")
        super().__init__(time_kind, dict_x.input_dim, dict_u.input_dim)
        self.dict_x = dict_x
        self.dict_u = dict_u
        self.K_x = K_x
        self.K_u = K_u

    def _apply(self, x, u):
        return self.K_x @ self.dict_x.evaluate(x) + self.K_u @ self.dict_u.evaluate(u)

    def _jac_x(self, x, u):
        return self.K_x @ self.dict_x.jacobian(x)

    def _jac_u(self, x, u):
        return self.K_u @ self.dict_u.jacobian(u)

    def to_payload(self) -> dict:
        return {
            "schema_version": MODEL_SCHEMA_VERSION,
            "variant": self.variant,
            "time_kind": self.time_kind,
            "state_dim": self.state_dim,
            "input_dim": self.input_dim,
            "dictionaries": {
                "state": _require_spec(self.dict_x, "state dictionary"),
                "input": _require_spec(self.dict_u, "input dictionary"),
            },
            "operators": {"K_x": self.K_x.tolist(), "K_u": self.K_u.tolist()},
            "metadata": self._metadata(),
        }


class JointModel(KoopmanModel):
    """psi_x(x_{k+1}) = K_x psi_x(x_k) + K_xu psi_xu(x_k, u_k)."""

    variant = "joint"

    def __init__(self, dict_x: Dictionary, dict_xu: JointDictionary, K_x, K_xu, time_kind: str):
        K_x = np.asarray(K_x, dtype=float)
        K_xu = np.asarray(K_xu, dtype=float)
        if K_x.shape != (dict_x.size, dict_x.size):
            raise ValueError(f"K_x must be {dict_x.size}x{dict_x.size}, got {K_x.shape}")
        if K_xu.shape != (dict_x.size, dict_xu.size):
            raise ValueError(f"K_xu must be {dict_x.size}x{dict_xu.size}, got {K_xu.shape}")
        if dict_xu.state_dim != dict_x.input_dim:
            raise ValueError("state and cross dictionaries disagree on state dimension")
        super().__init__(time_kind, dict_x.input_dim, dict_xu.input_dim)
        self.dict_x = dict_x
        self.dict_xu = dict_xu
        self.K_x = K_x
        self.K_xu = K_xu

    def _apply(self, x, u):
        return self.K_x @ self.dict_x.evaluate(x) + self.K_xu @ self.dict_xu.evaluate(x, u)

    def _jac_x(self, x, u):
        return self.K_x @ self.dict_x.jacobian(x) + self.K_xu @ self.dict_xu.jacobian_x(x, u)

    def _jac_u(self, x, u):
        return self.K_xu @ self.dict_xu.jacobian_u(x, u)

    def to_payload(self) -> dict:
        return {
            "schema_version": MODEL_SCHEMA_VERSION,
            "variant": self.variant,
            "time_kind": self.time_kind,
            "state_dim": self.state_dim,
            "input_dim": self.input_dim,
            "dictionaries": {
                "state": _require_spec(self.dict_x, "state dictionary"),
                "cross": _require_spec(self.dict_xu, "cross dictionary"),
            },
            "operators": {"K_x": self.K_x.tolist(), "K_xu": self.K_xu.tolist()},
            "metadata": self._metadata(),
        }


class BilinearModel(KoopmanModel):
    """psi_x(x_{k+1}) = K(u_k) psi_x(x_k) with K(u) = sum_i psi_u_i(u) K_i."""

    variant = "bilinear"

    def __init__(self, dict_x: Dictionary, dict_u: Dictionary, K_terms, time_kind: str):
        K_terms = [np.asarray(K, dtype=float) for K in K_terms]
        N = dict_x.size
        if len(K_terms) != dict_u.size:
            raise ValueError(
                f"need one operator term per input observable "
                f"({dict_u.size}), got {len(K_terms)}"
            )
        for i, K in enumerate(K_terms):
            if K.shape != (N, N):
                raise ValueError(f"K_terms[{i}] must be {N}x{N}, got {K.shape}")
        super().__init__(time_kind, dict_x.input_dim, dict_u.input_dim)
        self.dict_x = dict_x
        self.dict_u = dict_u
        self.K_terms = K_terms

    def K_of(self, u) -> np.ndarray:
        """Input-dependent operator K(u) = sum_i psi_u_i(u) K_i."""
        w = self.dict_u.evaluate(u)
        out = np.zeros_like(self.K_terms[0])
        for wi, K in zip(w, self.K_terms):
            out = out + wi * K
        return out

    def _apply(self, x, u):
        return self.K_of(u) @ self.dict_x.evaluate(x)

    def _jac_x(self, x, u):
        return self.K_of(u) @ self.dict_x.jacobian(x)

    def _jac_u(self, x, u):
        px = self.dict_x.evaluate(x)
        Ju = self.dict_u.jacobian(u)  # (N_u, m)
        cols = [
            sum(Ju[i, j] * (self.K_terms[i] @ px) for i in range(len(self.K_terms)))
            for j in range(self.input_dim)
        ]
        return np.stack(cols, axis=1)

    def to_payload(self) -> dict:
        return {
            "schema_version": MODEL_SCHEMA_VERSION,
            "variant": self.variant,
            "time_kind": self.time_kind,
            "state_dim": self.state_dim,
            "input_dim": self.input_dim,
            "dictionaries": {
                "state": _require_spec(self.dict_x, "state dictionary"),
                "input": _require_spec(self.dict_u, "input dictionary"),
            },
            "operators": {"K_terms": [K.tolist() for K in self.K_terms]},
            "metadata": self._metadata(),
        }


class EigenModel(KoopmanModel):
    """d/dt psi(x, u) = Lambda psi(x, u) + (d psi/d u) udot, Lambda diagonal.

    The eigenfunction dictionary may be state-only (a Dictionary; the input
    coordinate is then inert) or genuinely joint (a JointDictionary). Only
    the diagonal eigenvalues are fitted; the input-rate transport term is
    carried by the observables themselves, not by an operator.
    """

    variant = "eigen"

    def __init__(self, eigendict, eigenvalues, input_dim: int = 0):
        self.joint_observables = isinstance(eigendict, JointDictionary)
        if self.joint_observables:
            state_dim = eigendict.state_dim
            input_dim = eigendict.input_dim
        else:
            state_dim = eigendict.input_dim
        super().__init__("continuous", state_dim, input_dim)
        eigenvalues = np.asarray(eigenvalues, dtype=float).ravel()
        if eigenvalues.shape[0] != eigendict.size:
            raise ValueError(
                f"need one eigenvalue per observable ({eigendict.size}), "
                f"got {eigenvalues.shape[0]}"
            )
        self.eigendict = eigendict
        self.eigenvalues = eigenvalues

    @property
    def Lam(self) -> np.ndarray:
        """The diagonal eigenvalue matrix."""
        return np.diag(self.eigenvalues)

    # -- observable dispatch (state-only dictionaries ignore u) ---------------

    def observe(self, x, u) -> np.ndarray:
        if self.joint_observables:
            return self.eigendict.evaluate(x, u)
        return self.eigendict.evaluate(x)

    def observe_jac_x(self, x, u) -> np.ndarray:
        if self.joint_observables:
            return self.eigendict.jacobian_x(x, u)
        return self.eigendict.jacobian(x)

    def observe_jac_u(self, x, u) -> np.ndarray:
        if self.joint_observables:
            return self.eigendict.jacobian_u(x, u)
        return np.zeros((self.eigendict.size, self.input_dim))

    def rate(self, x, u, u_dot=None) -> np.ndarray:
        """Represented d/dt psi; the transport term needs udot when psi
        depends on the input."""
        out = self.eigenvalues * self.observe(x, u)
        if u_dot is not None:
            out = out + self.observe_jac_u(x, u) @ np.asarray(u_dot, dtype=float)
        return out

    @property
    def state_inclusive(self) -> bool:
        return False if self.joint_observables else self.eigendict.state_inclusive

    @property
    def lifted_dim(self) -> int:
        return self.eigendict.size

    def to_payload(self) -> dict:
        return {
            "schema_version": MODEL_SCHEMA_VERSION,
            "variant": self.variant,
            "time_kind": self.time_kind,
            "state_dim": self.state_dim,
            "input_dim": self.input_dim,
            "dictionaries": {
                "eigen": {
                    "joint": self.joint_observables,
                    "spec": _require_spec(self.eigendict, "eigenfunction dictionary"),
                }
            },
            "operators": {"eigenvalues": self.eigenvalues.tolist()},
            "metadata": self._metadata(),
        }


# -- fitting -------------------------------------------------------------------


def _continuous_targets(data: SnapshotDataset, dict_x: Dictionary) -> np.ndarray:
    # rows are J_psi(x_k) @ xdot_k, the sampled d/dt of the lifted state
    return np.stack([dict_x.jacobian(x) @ y for x, y in zip(data.X, data.Y)], axis=0)


def _lift_targets(data: SnapshotDataset, dict_x: Dictionary) -> np.ndarray:
    if data.kind == "discrete-pairs":
        return dict_x.evaluate_batch(data.Y)
    return _continuous_targets(data, dict_x)


def _check_data_dims(data: SnapshotDataset, dict_x: Dictionary):
    if dict_x.input_dim != data.state_dim:
        raise ValueError(
            f"state dictionary is over R^{dict_x.input_dim} but data has "
            f"state dimension {data.state_dim}"
        )


def _require_samples(n: int, unknowns: int, what: str):
    if n < unknowns:
        raise ValueError(
            f"insufficient samples for {what}: {unknowns} coefficient columns "
            f"need at least {unknowns} samples, got {n}"
        )


def _rms(residual_matrix: np.ndarray, n: int) -> float:
    return float(np.linalg.norm(residual_matrix) / np.sqrt(n))


def _finish(model: KoopmanModel, data: SnapshotDataset, residual: float, ridge: float):
    model.training_residual = residual
    model.n_samples = data.n_samples
    model.ridge = float(ridge)
    model.dt = data.dt
    model.system_name = data.system_name
    return model


def fit_affine(data: SnapshotDataset, dict_x: Dictionary, ridge: float = 0.0) -> AffineModel:
    """Least-squares (K, B) with constant input coefficients.

    Raises a rank error when the inputs are identically zero: the B columns
    are then unidentifiable (fit with ridge > 0 or excite the input).
    """
    _check_data_dims(data, dict_x)
    N, m = data.n_samples, data.input_dim
    _require_samples(N, dict_x.size + m, "the affine fit")
    Psi = dict_x.evaluate_batch(data.X)
    T = _lift_targets(data, dict_x)
    G = np.hstack([Psi, data.U]) if m else Psi
    try:
        Theta = solve_least_squares(G, T, ridge=ridge)
    except RankDeficiencyError as err:
        if m and np.all(data.U == 0.0):
            raise RankDeficiencyError(
                err.rank,
                G.shape[1],
                "inputs are identically zero, so the input operator B is "
                "unidentifiable; add ridge regularization or excite the input",
            ) from None
        raise
    K = Theta[: dict_x.size].T
    B = Theta[dict_x.size :].T if m else None
    time_kind = "discrete" if data.kind == "discrete-pairs" else "continuous"
    model = AffineModel(dict_x, K, B, time_kind, input_dim=m)
    return _finish(model, data, _rms(G @ Theta - T, N), ridge)


def fit_separable(data: SnapshotDataset, dict_x: Dictionary, dict_u: Dictionary,
                  ridge: float = 0.0) -> SeparableModel:
    """Joint least squares over [K_x | K_u] with independent input observables."""
    _check_data_dims(data, dict_x)
    if not dict_u.zero_at_zero:
        raise ValueError(
            "input dictionary must vanish at u = 0; wrap it with "
            "subtract_value_at_zero or drop the constant"
        )
    if dict_u.input_dim != data.input_dim:
        raise ValueError(
            f"input dictionary is over R^{dict_u.input_dim} but data has "
            f"input dimension {data.input_dim}"
        )
    N = data.n_samples
    _require_samples(N, dict_x.size + dict_u.size, "the separable fit")
    Psi_x = dict_x.evaluate_batch(data.X)
    Psi_u = dict_u.evaluate_batch(data.U)
    G = np.hstack([Psi_x, Psi_u])
    T = _lift_targets(data, dict_x)
    try:
        Theta = solve_least_squares(G, T, ridge=ridge)
    except RankDeficiencyError as err:
        if np.all(data.U == 0.0):
            raise RankDeficiencyError(
                err.rank,
                G.shape[1],
                "inputs are identically zero, so the input observables never "
                "vary and K_u is unidentifiable; add ridge or excite the input",
            ) from None
        raise
    K_x = Theta[: dict_x.size].T
    K_u = Theta[dict_x.size :].T
    time_kind = "discrete" if data.kind == "discrete-pairs" else "continuous"
    model = SeparableModel(dict_x, dict_u, K_x, K_u, time_kind)
    return _finish(model, data, _rms(G @ Theta - T, N), ridge)


def _check_cross_vanishes(dict_xu: JointDictionary, states: np.ndarray):
    u0 = np.zeros(dict_xu.input_dim)
    probe = states[:: max(1, len(states) // 5)][:5]
    for x in probe:
        v = dict_xu.evaluate(np.asarray(x, dtype=float), u0)
        if np.max(np.abs(v)) > 1e-10:
            raise ValueError(
                "cross dictionary must vanish at u = 0; "
                f"got |psi_xu| = {np.max(np.abs(v)):.3g} there"
            )


def fit_joint(data: SnapshotDataset, dict_x: Dictionary, dict_xu: JointDictionary,
              ridge: float = 0.0, two_stage: bool = False) -> JointModel:
    """Least squares over [K_x | K_xu] with a u-vanishing cross dictionary.

    two_stage = True first fits K_x on the zero-input samples alone (which
    determine it exactly because psi_xu(x, 0) = 0), then fits K_xu on the
    actuated samples with K_x frozen. With no actuated samples K_xu is left
    at zero and the model is flagged not fully identified.
    """
    _check_data_dims(data, dict_x)
    if dict_xu.state_dim != data.state_dim or dict_xu.input_dim != data.input_dim:
        raise ValueError(
            f"cross dictionary is over R^{dict_xu.state_dim} x R^{dict_xu.input_dim} "
            f"but data has dimensions {data.state_dim} x {data.input_dim}"
        )
    _check_cross_vanishes(dict_xu, data.X)
    N = data.n_samples
    Psi_x = dict_x.evaluate_batch(data.X)
    Psi_xu = dict_xu.evaluate_batch(data.X, data.U)
    T = _lift_targets(data, dict_x)
    time_kind = "discrete" if data.kind == "discrete-pairs" else "continuous"

    if not two_stage:
        _require_samples(N, dict_x.size + dict_xu.size, "the joint fit")
        G = np.hstack([Psi_x, Psi_xu])
        Theta = solve_least_squares(G, T, ridge=ridge)
        K_x = Theta[: dict_x.size].T
        K_xu = Theta[dict_x.size :].T
        model = JointModel(dict_x, dict_xu, K_x, K_xu, time_kind)
        return _finish(model, data, _rms(G @ Theta - T, N), ridge)

    zero_rows = np.all(data.U == 0.0, axis=1)
    n0 = int(np.count_nonzero(zero_rows))
    _require_samples(n0, dict_x.size, "the zero-input stage of the two-stage fit")
    K_x = solve_least_squares(Psi_x[zero_rows], T[zero_rows], ridge=ridge).T

    model_notes = []
    rest = ~zero_rows
    if not np.any(rest):
        K_xu = np.zeros((dict_x.size, dict_xu.size))
        fully = False
        model_notes.append(
            "no actuated samples: cross operator K_xu left at zero (unidentified)"
        )
    else:
        _require_samples(
            int(np.count_nonzero(rest)), dict_xu.size,
            "the actuated stage of the two-stage fit",
        )
        T2 = T[rest] - Psi_x[rest] @ K_x.T
        K_xu = solve_least_squares(Psi_xu[rest], T2, ridge=ridge).T
        fully = True

    model = JointModel(dict_x, dict_xu, K_x, K_xu, time_kind)
    R = Psi_x @ K_x.T + Psi_xu @ K_xu.T - T
    _finish(model, data, _rms(R, N), ridge)
    model.fully_identified = fully
    model.notes.extend(model_notes)
    return model


def fit_bilinear(data: SnapshotDataset, dict_x: Dictionary, dict_u: Dictionary,
                 ridge: float = 0.0) -> BilinearModel:
    """Least squares over the operator family {K_i} of K(u) = sum psi_u_i(u) K_i.

    The input dictionary must contain the constant function so K(0) is
    representable. When the inputs never vary across the dataset, only the
    combined operator K(u0) is identifiable; the fit then falls back to the
    minimum-norm split across the K_i and flags the model accordingly.
    """
    _check_data_dims(data, dict_x)
    if dict_u.constant_index is None:
        raise ValueError(
            "input dictionary must contain the constant function so the "
            "zero-input operator K(0) is representable"
        )
    if dict_u.input_dim != data.input_dim:
        raise ValueError(
            f"input dictionary is over R^{dict_u.input_dim} but data has "
            f"input dimension {data.input_dim}"
        )
    N = data.n_samples
    Nx, Nu = dict_x.size, dict_u.size
    _require_samples(N, Nx * Nu, "the bilinear fit")
    Psi_x = dict_x.evaluate_batch(data.X)
    Psi_u = dict_u.evaluate_batch(data.U)
    # row k of G is kron(psi_u(u_k), psi_x(x_k)): one column block per input observable
    G = np.einsum("ki,kj->kij", Psi_u, Psi_x).reshape(N, Nu * Nx)
    T = _lift_targets(data, dict_x)

    fully = True
    model_notes = []
    try:
        Theta = solve_least_squares(G, T, ridge=ridge)
    except RankDeficiencyError:
        if np.all(data.U == data.U[0]):
            # only K(u0) is identified; take the minimum-norm split
            Theta = np.linalg.lstsq(G, T, rcond=None)[0]
            fully = False
            model_notes.append(
                "inputs constant across all samples: only the combined operator "
                "K(u0) is identified; the stored terms are its minimum-norm split"
            )
        else:
            raise
    K_terms = [Theta[i * Nx : (i + 1) * Nx].T for i in range(Nu)]
    time_kind = "discrete" if data.kind == "discrete-pairs" else "continuous"
    model = BilinearModel(dict_x, dict_u, K_terms, time_kind)
    _finish(model, data, _rms(G @ Theta - T, N), ridge)
    model.fully_identified = fully
    model.notes.extend(model_notes)
    return model


def fit_eigen(data: SnapshotDataset, eigendict) -> EigenModel:
    """Best diagonal Lambda for d/dt psi = Lambda psi on derivative data.

    The defining relation carries an input-rate transport term (d psi/d u)
    times udot on both sides once d/dt psi is expanded by the chain rule, so
    it cancels identically and the fit target reduces to
    (d psi/d x) xdot = Lambda psi with no udot dependence. Each eigenvalue
    solves its own scalar least-squares problem.
    """
    if data.kind != "continuous-derivative":
        raise ValueError("eigen fit requires continuous state-derivative data")
    joint = isinstance(eigendict, JointDictionary)
    if joint:
        if eigendict.state_dim != data.state_dim or eigendict.input_dim != data.input_dim:
            raise ValueError("eigenfunction dictionary dimensions do not match the data")
        Psi = eigendict.evaluate_batch(data.X, data.U)
        D = np.stack(
            [eigendict.jacobian_x(x, u) @ y for x, u, y in zip(data.X, data.U, data.Y)],
            axis=0,
        )
    else:
        if eigendict.input_dim != data.state_dim:
            raise ValueError("eigenfunction dictionary dimensions do not match the data")
        Psi = eigendict.evaluate_batch(data.X)
        D = _continuous_targets(data, eigendict)

    lam = np.zeros(eigendict.size)
    model_notes = []
    for i in range(eigendict.size):
        den = float(Psi[:, i] @ Psi[:, i])
        if den == 0.0:
            model_notes.append(
                f"observable {eigendict.names[i]!r} vanishes on the data; "
                "its eigenvalue is set to 0"
            )
            continue
        lam[i] = float(Psi[:, i] @ D[:, i]) / den

    model = EigenModel(eigendict, lam, input_dim=data.input_dim)
    _finish(model, data, _rms(Psi * lam - D, data.n_samples), 0.0)
    model.notes.extend(model_notes)
    return model


def bilinear_to_joint(model: BilinearModel) -> JointModel:
    """Rewrite K(u) psi_x as K(0) psi_x + I psi_xu with psi_xu = (K(u) - K(0)) psi_x.

    One-step predictions of the source and converted models agree exactly,
    and the derived cross dictionary vanishes at u = 0 by construction.
    """
    if model.variant != "bilinear":
        raise ValueError(f"expected a bilinear model, got variant {model.variant!r}")
    if model.dict_u.constant_index is None:
        raise ValueError(
            "constant function absent from the input dictionary; K(0) is not "
            "representable so the conversion is undefined"
        )
    dict_xu = bilinear_cross_dictionary(model.dict_x, model.dict_u, model.K_terms)
    K_x = model.K_of(np.zeros(model.input_dim))
    K_xu = np.eye(model.dict_x.size)
    out = JointModel(model.dict_x, dict_xu, K_x, K_xu, model.time_kind)
    out.training_residual = model.training_residual
    out.n_samples = model.n_samples
    out.ridge = model.ridge
    out.fully_identified = model.fully_identified
    out.dt = model.dt
    out.system_name = model.system_name
    out.notes = list(model.notes)
    out.notes.append("derived from a bilinear model; cross dictionary is (K(u) - K(0)) psi_x")
    return out


# conventional name for this conversion, after the input-parameterized
# operator-family form it starts from
williams_to_joint = bilinear_to_joint


# -- prediction ----------------------------------------------------------------


def predict_step(model: KoopmanModel, x, u, extract_state: bool | None = None):
    """One-step prediction: (psi_next, x_next).

    x_next is read off the identity-observable rows when the state dictionary
    is state-inclusive; otherwise it is None (or an error when extract_state
    is forced True).
    """
    psi_next = model.lift_next(x, u)
    if extract_state is False:
        return psi_next, None
    if not model.state_inclusive:
        if extract_state:
            raise ValueError(
                "state extraction requires a state-inclusive dictionary"
            )
        return psi_next, None
    return psi_next, psi_next[model.dict_x.state_index_map]


class RolloutResult:
    """Predicted state sequence, possibly truncated by the divergence guard."""

    def __init__(self, states: np.ndarray, diverged: bool = False):
        self.states = np.atleast_2d(np.asarray(states, dtype=float))
        self.diverged = bool(diverged)

    def __len__(self):
        return self.states.shape[0]

    def __repr__(self):
        return f"RolloutResult(steps={len(self) - 1}, diverged={self.diverged})"


def rollout(model: KoopmanModel, x0, controls, relift: str = "every-step",
            divergence_bound: float = 1e6) -> RolloutResult:
    """Multi-step prediction under a known input sequence.

    relift = "every-step" re-evaluates the dictionary at each predicted
    state (the default); "none" propagates the lifted vector linearly and
    only reads the state rows off it. Cross/input observables that need a
    state argument use the read-off state in "none" mode.
    """
    model._require("discrete")
    if not model.state_inclusive:
        raise ValueError("state rollout requires a state-inclusive dictionary")
    if relift not in ("every-step", "none"):
        raise ValueError(f"relift must be 'every-step' or 'none', got {relift!r}")
    x = np.asarray(x0, dtype=float)
    controls = np.asarray(controls, dtype=float)
    if controls.size == 0:
        return RolloutResult(x[None, :])
    controls = np.atleast_2d(controls)
    idx = model.dict_x.state_index_map

    states = [x.copy()]
    diverged = False
    z = model.lift(x) if relift == "none" else None
    for u in controls:
        if relift == "every-step":
            psi_next = model.lift_next(x, u)
            x = psi_next[idx]
        else:
            z = model._advance_lifted(z, u)
            x = z[idx]
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > divergence_bound:
            diverged = True
            break
        states.append(x.copy())
    return RolloutResult(np.array(states), diverged)


def _affine_advance(self, z, u):
    out = self.K @ z
    if self.B is not None:
        out = out + self.B @ np.asarray(u, dtype=float)
    return out


def _separable_advance(self, z, u):
    return self.K_x @ z + self.K_u @ self.dict_u.evaluate(u)


def _joint_advance(self, z, u):
    x_hat = z[self.dict_x.state_index_map]
    return self.K_x @ z + self.K_xu @ self.dict_xu.evaluate(x_hat, u)


def _bilinear_advance(self, z, u):
    return self.K_of(u) @ z


AffineModel._advance_lifted = _affine_advance
SeparableModel._advance_lifted = _separable_advance
JointModel._advance_lifted = _joint_advance
BilinearModel._advance_lifted = _bilinear_advance


def model_residual(model: KoopmanModel, data: SnapshotDataset) -> float:
    """RMS lifted prediction residual of a model on a dataset."""
    if model.variant == "eigen":
        if data.kind != "continuous-derivative":
            raise ValueError("eigen models evaluate on continuous state-derivative data")
        rows = [
            model.eigenvalues * model.observe(x, u) - model.observe_jac_x(x, u) @ y
            for x, u, y in zip(data.X, data.U, data.Y)
        ]
        return _rms(np.stack(rows, axis=0), data.n_samples)
    expected_kind = "discrete-pairs" if model.time_kind == "discrete" else "continuous-derivative"
    if data.kind != expected_kind:
        raise ValueError(
            f"{model.time_kind}-time model evaluates on {expected_kind} data, "
            f"got {data.kind}"
        )
    T = _lift_targets(data, model.dict_x)
    P = np.stack([model._apply(x, u) for x, u in zip(data.X, data.U)], axis=0)
    return _rms(P - T, data.n_samples)


# -- serialization ---------------------------------------------------------------


def model_to_payload(model: KoopmanModel) -> dict:
    return model.to_payload()


def model_from_payload(payload: dict) -> KoopmanModel:
    if not isinstance(payload, dict) or "variant" not in payload:
        raise ValueError("model payload must be a dict with a 'variant' key")
    version = payload.get("schema_version")
    if version != MODEL_SCHEMA_VERSION:
        raise ValueError(
            f"unsupported model schema_version {version!r}; "
            f"this build reads version {MODEL_SCHEMA_VERSION}"
        )
    variant = payload["variant"]
    dicts = payload.get("dictionaries", {})
    ops = payload.get("operators", {})
    time_kind = payload["time_kind"]
    try:
        if variant == "affine":
            model = AffineModel(
                build_dictionary(dicts["state"]),
                np.asarray(ops["K"], dtype=float),
                None if ops["B"] is None else np.asarray(ops["B"], dtype=float),
                time_kind,
                input_dim=int(payload.get("input_dim", 0)),
            )
        elif variant == "separable":
            model = SeparableModel(
                build_dictionary(dicts["state"]),
                build_dictionary(dicts["input"]),
                np.asarray(ops["K_x"], dtype=float),
                np.asarray(ops["K_u"], dtype=float),
                time_kind,
            )
        elif variant == "joint":
            model = JointModel(
                build_dictionary(dicts["state"]),
                joint_dictionary_from_spec(dicts["cross"]),
                np.asarray(ops["K_x"], dtype=float),
                np.asarray(ops["K_xu"], dtype=float),
                time_kind,
            )
        elif variant == "bilinear":
            model = BilinearModel(
                build_dictionary(dicts["state"]),
                build_dictionary(dicts["input"]),
                [np.asarray(K, dtype=float) for K in ops["K_terms"]],
                time_kind,
            )
        elif variant == "eigen":
            entry = dicts["eigen"]
            eigendict = (
                joint_dictionary_from_spec(entry["spec"])
                if entry["joint"]
                else build_dictionary(entry["spec"])
            )
            model = EigenModel(
                eigendict, ops["eigenvalues"], input_dim=int(payload.get("input_dim", 0))
            )
        else:
            raise ValueError(f"unknown model variant {variant!r}")
    except KeyError as exc:
        raise ValueError(f"model payload for {variant!r} is missing field {exc}") from None
    model._restore_metadata(payload.get("metadata", {}))
    return model


def save_model(model: KoopmanModel, path) -> None:
    import json
    from pathlib import Path

    Path(path).write_text(
        json.dumps(model_to_payload(model), indent=2, sort_keys=True) + "\n"
    )


def load_model(path):
    import json
    from pathlib import Path

    return model_from_payload(json.loads(Path(path).read_text()))
