"""Lifted linear models of controlled dynamical systems.

The package fits five formulations of a linear operator acting on
dictionary observables (affine, separable, joint, bilinear, eigen) and
evaluates the dynamical-consistency conditions each one must satisfy,
reported as residual fields over an evaluation grid.

Submodules are imported lazily: `kooplab.cli` caps BLAS threading via
the KOOPLAB_THREADS environment variable, which only works if nothing
has imported numpy yet, so importing the package must stay side-effect
free until a numerical name is actually used.
"""

from __future__ import annotations

__version__ = "0.1.0"

_SUBMODULES = (
    "cli",
    "config",
    "consistency",
    "dynamics",
    "formulations",
    "numerics",
    "observables",
)

# top-level convenience names -> defining submodule
_EXPORTS = {
    "ControlledSystem": "dynamics",
    "EvaluationGrid": "dynamics",
    "SnapshotDataset": "dynamics",
    "builtin_system": "dynamics",
    "default_grid": "dynamics",
    "discretize": "dynamics",
    "generate_dataset": "dynamics",
    "load_dataset": "dynamics",
    "save_dataset": "dynamics",
    "simulate": "dynamics",
    "Dictionary": "observables",
    "JointDictionary": "observables",
    "build_dictionary": "observables",
    "build_joint_dictionary": "observables",
    "identity": "observables",
    "monomials": "observables",
    "rbf": "observables",
    "VARIANTS": "formulations",
    "fit_affine": "formulations",
    "fit_bilinear": "formulations",
    "fit_eigen": "formulations",
    "fit_joint": "formulations",
    "fit_separable": "formulations",
    "bilinear_to_joint": "formulations",
    "williams_to_joint": "formulations",
    "load_model": "formulations",
    "predict_step": "formulations",
    "rollout": "formulations",
    "save_model": "formulations",
    "CONDITION_IDS": "consistency",
    "ConsistencyReport": "consistency",
    "DEFAULT_TOLERANCE": "consistency",
    "HypothesisViolationError": "consistency",
    "summarize": "consistency",
    "ExperimentConfig": "config",
    "load_config": "config",
    "parse_config": "config",
}

__all__ = ["__version__", *_SUBMODULES, *_EXPORTS]


def __getattr__(name: str):
    import importlib

    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    if name in _EXPORTS:
        module = importlib.import_module(f".{_EXPORTS[name]}", __name__)
        return getattr(module, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(__all__)
