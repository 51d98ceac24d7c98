"""Experiment configuration (JSON) and built-in profiles."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, fields

from ..errors import ValidationError
from ..fqi import NO_TRANSFER, ONE_STEP, TWO_STEP, EngineConfig
from ..oracle import ReferenceConfig
from ..sieve import BSplineBasis

METHODS = (NO_TRANSFER, ONE_STEP, TWO_STEP)

DEFAULT_ENV = {
    "i_target": 20,
    "i_source": [10, 20, 40, 80],
    "horizon": 5,
    "sigma_c": [0.25, 0.5, 0.75, 1.0],
    "state_noise_sd": 0.5,
    "reward_noise_sd": 0.5,
    "c_target": None,       # fixed 3x3 matrices instead of random draws
    "c_source": None,
}


@dataclass
class ExperimentConfig:
    name: str = "default"
    gamma: float = 0.9
    basis: dict = field(default_factory=lambda: {"degree": 3, "knots_per_dim": 4,
                                                 "mode": "additive"})
    engine: dict = field(default_factory=dict)
    env: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_ENV))
    reference: dict = field(default_factory=dict)
    replications: int = 50
    master_seed: int = 0
    methods: list = field(default_factory=lambda: list(METHODS))
    diagnostics: bool = True
    record_runtime: bool = False

    def __post_init__(self):
        env = copy.deepcopy(DEFAULT_ENV)
        unknown = set(self.env) - set(env)
        if unknown:
            raise ValidationError("unknown env option(s): %s" % ", ".join(sorted(unknown)))
        env.update(self.env)
        self.env = env
        if self.replications < 1:
            raise ValidationError("replications must be >= 1")
        if not self.methods or any(m not in METHODS for m in self.methods):
            raise ValidationError("methods must be a nonempty subset of %s" % (METHODS,))
        if any(s < 0 for s in self.env["sigma_c"]) or not self.env["sigma_c"]:
            raise ValidationError("sigma_c values must be nonnegative and nonempty")
        if not self.env["i_source"] or min(self.env["i_source"]) < 0:
            raise ValidationError("i_source must list nonnegative trajectory counts")
        if self.env["i_target"] < 1 or self.env["horizon"] < 1:
            raise ValidationError("i_target and horizon must be positive")
        # fail early on bad nested options
        self.engine_config(0)
        self.basis_obj()
        self.reference_config()

    def engine_config(self, seed):
        return EngineConfig.from_dict({**self.engine, "gamma": self.gamma, "seed": seed})

    def basis_obj(self):
        try:
            return BSplineBasis(3, **self.basis)
        except TypeError as exc:
            raise ValidationError("bad basis options: %s" % exc) from None

    def reference_config(self):
        try:
            return ReferenceConfig.from_dict(self.reference)
        except TypeError as exc:
            raise ValidationError("bad reference options: %s" % exc) from None

    def to_dict(self):
        return {f.name: copy.deepcopy(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ValidationError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError("unknown config key(s): %s" % ", ".join(sorted(unknown)))
        return cls(**doc)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def load_config(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ValidationError("config file not found: %s" % path) from None
    except json.JSONDecodeError as exc:
        raise ValidationError("config %s is not valid JSON: %s" % (path, exc)) from None
    return ExperimentConfig.from_dict(doc)


def profile(name):
    """Built-in configurations; see README for what each reproduces."""
    try:
        doc = copy.deepcopy(PROFILES[name])
    except KeyError:
        raise ValidationError("unknown profile %r (have %s)" % (name, ", ".join(PROFILES))) \
            from None
    return ExperimentConfig.from_dict(doc)


# Desk-scale regime for the method comparison grids. With I0 = 20 target
# trajectories a disjoint Upsilon-way split leaves a handful of rows per
# iteration, fewer than the 32 coefficients, so the reproduction profiles
# reuse every row at each iteration and evaluate against the exact optimal
# policy of the quadratic environment.
_REPRO_ENGINE = {"reuse_all_data": True, "upsilon": 30}
_EXACT_REFERENCE = {"policy": "exact"}

PROFILES = {
    "default": {"name": "default"},
    "grid-gamma0.9": {"name": "grid-gamma0.9", "gamma": 0.9, "engine": _REPRO_ENGINE,
                         "reference": _EXACT_REFERENCE},
    "grid-gamma0.6": {"name": "grid-gamma0.6", "gamma": 0.6, "engine": _REPRO_ENGINE,
                         "reference": _EXACT_REFERENCE},
    "fixed-rewards": {
        "name": "fixed-rewards", "engine": _REPRO_ENGINE, "reference": _EXACT_REFERENCE,
        "env": {"c_target": [[1, 0, 0], [0, 0, 0], [0, 0, 0]],
                "c_source": [[0, 0, 0], [0, 0, 0], [0, 0, 0]],
                "sigma_c": [0.0], "i_source": [80]},
        "methods": [ONE_STEP, TWO_STEP],
    },
    "acceptance": {"name": "acceptance", "gamma": 0.9, "engine": _REPRO_ENGINE,
                   "reference": _EXACT_REFERENCE, "replications": 50, "master_seed": 0},
    "smoke": {
        "name": "smoke", "replications": 2,
        "env": {"i_source": [20, 40], "sigma_c": [0.25, 1.0]},
        "engine": {"reuse_all_data": True, "upsilon": 5},
        "reference": {"big_n_traj": 200, "n_eval": 40, "n_rollouts": 50, "policy": "exact"},
    },
}
