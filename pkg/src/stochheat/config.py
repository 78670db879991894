"""Run configuration: one YAML file per run, strictly validated.

Unknown keys are rejected everywhere so a typo cannot silently fall back
to a default.  All numeric defaults live in DEFAULTS and are printed by
the ``defaults`` subcommand.
"""

import copy
import hashlib
import json

import numpy as np
import yaml

from .density import ActuatorDensity, CellGrid
from .errors import InvalidConfigError
from .spectral import BoxDomain, Region, build_basis
from .tree import FiltrationTree, NoiseCoefficient, TimeWindow

DEFAULTS = {
    "seed": 1234,
    "out": "runs",
    "domain": {"lengths": [3.141592653589793]},
    "basis": {"count": 8},
    "tree": {"steps": 6, "horizon": 1.0},
    "noise": {"values": [0.0]},
    "window": {"intervals": [[0.0, 1.0]]},
    "region": {"boxes": [[0.7853981633974483, 2.356194490192345]]},
    "grid": {"cells": [16], "alpha": 0.25, "theta": None},
    "control": {"y0_mode": 1, "y0_amplitude": 1.0, "y0_coeffs": None},
    "solver": {
        "eps": 0.0,
        "eps_schedule": [],
        "tol": 1.0e-10,
        "max_iter": 5000,
        "dense_limit": 600,
        "method": "projected-gradient",
        "outer_tol": 1.0e-8,
        "outer_max_iter": 300,
        "restarts": 8,
        "min_norm_trials": 20,
    },
    "observability": {
        "decay_samples": 200,
        "lambda_cutoff": None,
        "t_index": None,
        "ascent_steps": 60,
        "l1_samples": 64,
    },
    "sweep": {"region_fractions": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]},
    "verify": {"duality_tuples": 200, "decay_samples": 300, "levelset_samples": 300,
               "value_identity_samples": 10, "convexity_pairs": 20, "nash_probes": 100},
    "debug": {"corrupt_adjoint": False},
}


def _merge_checked(defaults, user, path=""):
    if user is None:
        return copy.deepcopy(defaults)
    if not isinstance(user, dict):
        raise InvalidConfigError(f"section '{path or '<root>'}' must be a mapping")
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        if key not in defaults:
            raise InvalidConfigError(f"unknown config key '{path}{key}'")
        if isinstance(defaults[key], dict):
            out[key] = _merge_checked(defaults[key], value, path=f"{path}{key}.")
        else:
            out[key] = copy.deepcopy(value)
    return out


class RunConfig:
    """Validated run configuration with builders for every domain object."""

    def __init__(self, data=None, seed=None, out=None):
        self.data = _merge_checked(DEFAULTS, data or {})
        if seed is not None:
            self.data["seed"] = int(seed)
        if out is not None:
            self.data["out"] = str(out)
        self._validate()

    @classmethod
    def from_file(cls, path, seed=None, out=None):
        with open(path, "r", encoding="utf-8") as fh:
            try:
                data = yaml.safe_load(fh) or {}
            except yaml.YAMLError as exc:
                raise InvalidConfigError(f"config file does not parse: {exc}") from exc
        return cls(data, seed=seed, out=out)

    def _validate(self):
        d = self.data
        if not isinstance(d["seed"], int) or d["seed"] < 0:
            raise InvalidConfigError("seed must be a nonnegative integer")
        # Builders run all structural validation; build everything once.
        domain = self.domain()
        self.basis(domain)
        tree = self.tree()
        self.noise(tree)
        window = self.window()
        if window.measure <= 0:
            raise InvalidConfigError("time window must have positive measure")
        if window.intervals[-1][1] > tree.horizon + 1e-12:
            raise InvalidConfigError("time window escapes the horizon")
        self.region(domain)
        self.grid(domain)
        if d["solver"]["method"] not in ("projected-gradient", "frank-wolfe"):
            raise InvalidConfigError(f"unknown optimizer method {d['solver']['method']!r}")

    # -- builders -----------------------------------------------------------
    @property
    def seed(self):
        return self.data["seed"]

    def domain(self):
        return BoxDomain(tuple(self.data["domain"]["lengths"]))

    def basis(self, domain=None):
        return build_basis(domain or self.domain(), int(self.data["basis"]["count"]))

    def tree(self):
        return FiltrationTree(int(self.data["tree"]["steps"]), float(self.data["tree"]["horizon"]))

    def noise(self, tree=None):
        tree = tree or self.tree()
        vals = np.asarray(self.data["noise"]["values"], dtype=float).ravel()
        if vals.size == 1:
            vals = np.full(tree.steps, vals[0])
        if vals.size != tree.steps:
            raise InvalidConfigError(
                f"noise needs 1 or {tree.steps} values, got {vals.size}"
            )
        return NoiseCoefficient(vals)

    def window(self):
        return TimeWindow(tuple(tuple(iv) for iv in self.data["window"]["intervals"]))

    def region(self, domain=None):
        domain = domain or self.domain()
        boxes = []
        for flat in self.data["region"]["boxes"]:
            flat = list(flat)
            if len(flat) != 2 * domain.dims:
                raise InvalidConfigError(
                    f"region box {flat} needs {2 * domain.dims} numbers"
                )
            boxes.append(tuple((flat[2 * i], flat[2 * i + 1]) for i in range(domain.dims)))
        return Region(domain, tuple(boxes))

    def grid(self, domain=None):
        return CellGrid(domain or self.domain(), tuple(self.data["grid"]["cells"]))

    def density(self, domain=None):
        grid = self.grid(domain)
        alpha = float(self.data["grid"]["alpha"])
        theta = self.data["grid"]["theta"]
        if theta is None:
            return ActuatorDensity.constant(grid, alpha)
        return ActuatorDensity(grid, np.asarray(theta, dtype=float), alpha)

    def y0(self, basis):
        ctl = self.data["control"]
        if ctl["y0_coeffs"] is not None:
            coeffs = np.asarray(ctl["y0_coeffs"], dtype=float)
            if coeffs.shape != (basis.count,):
                raise InvalidConfigError(f"y0 needs {basis.count} coefficients")
            return coeffs
        mode = int(ctl["y0_mode"])
        if not 1 <= mode <= basis.count:
            raise InvalidConfigError(f"y0 mode {mode} out of range 1..{basis.count}")
        out = np.zeros(basis.count)
        out[mode - 1] = float(ctl["y0_amplitude"])
        return out

    def eps_schedule(self):
        sched = list(self.data["solver"]["eps_schedule"])
        if not sched:
            sched = [float(self.data["solver"]["eps"])]
        return [float(e) for e in sched]

    # -- identity -------------------------------------------------------------
    def canonical(self):
        return json.loads(json.dumps(self.data, sort_keys=True))

    def hash(self):
        blob = json.dumps(self.canonical(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def defaults_yaml():
    return yaml.safe_dump(DEFAULTS, sort_keys=True, default_flow_style=None)
