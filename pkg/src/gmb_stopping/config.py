"""Experiment configuration: a sectioned ``key = value`` text file.

Every key has a declared type; unknown sections or keys are rejected.  See
the README for the key-by-key reference.  Presets are stored as text in the
same format so that what is run is exactly what is serialised.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path

from .curves import KINDS as CURVE_KINDS
from .curves import CoefficientCurve
from .exceptions import ConfigurationError
from .gmp_kernel import GmpModel, variance
from .mc_solver import DEFAULT_BOUNDS, SolverGrid, default_grid
from .priors import (
    FRAMES,
    DiracPrior,
    DiscretePrior,
    GaussianPrior,
    TabulatedPrior,
    TruncatedGaussianPrior,
)

PRIOR_KINDS = ("dirac", "discrete", "gaussian", "truncated_gaussian", "tabulated")
METHODS = ("mc", "volterra", "both")


def _float(v):
    try:
        return float(v)
    except ValueError:
        raise ConfigurationError(f"expected a number, got {v!r}") from None


def _int(v):
    try:
        return int(v)
    except ValueError:
        raise ConfigurationError(f"expected an integer, got {v!r}") from None


def _floats(v):
    return tuple(_float(p) for p in v.replace(";", ",").split(",") if p.strip())


def _bool(v):
    low = v.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigurationError(f"expected a boolean, got {v!r}")


def _choice(options):
    def parse(v):
        v = v.strip()
        if v not in options:
            raise ConfigurationError(f"expected one of {options}, got {v!r}")
        return v

    return parse


_CURVE_KEYS = {
    f"{name}.{k}": p
    for name in ("alpha", "beta", "zeta")
    for k, p in (("kind", _choice(CURVE_KINDS)), ("params", _floats), ("csv", str))
}

SCHEMA = {
    "model": {"T": _float, "x0": _float, **_CURVE_KEYS},
    "prior": {
        "kind": _choice(PRIOR_KINDS),
        "frame": _choice(FRAMES),
        "z": _float,
        "points": _floats,
        "weights": _floats,
        "mean": _float,
        "variance": _float,
        "variance_from_model": _float,
        "lower": _float,
        "upper": _float,
        "csv": str,
    },
    "grid": {
        "N": _int,
        "M": _int,
        "K": _int,
        "x_min": _float,
        "x_max": _float,
        "seed": _int,
    },
    "solver": {
        "method": _choice(METHODS),
        "workers": _int,
        "common_random_numbers": _bool,
        "variance_cap": _float,
        "volterra_points": _int,
        "tol": _float,
        "max_iter": _int,
        "damping": _float,
    },
    "validate": {
        "n_paths": _int,
        "cross_tolerance": _float,
        **{f"partner.{k}": v for k, v in (
            ("kind", _choice(PRIOR_KINDS[:-1])),
            ("frame", _choice(FRAMES)),
            ("z", _float),
            ("points", _floats),
            ("weights", _floats),
            ("mean", _float),
            ("variance", _float),
            ("lower", _float),
            ("upper", _float),
        )},
    },
    "output": {
        "directory": str,
        "n_paths": _int,
        "dump_paths": _bool,
        "dump_timechange": _bool,
    },
}

DEFAULTS = {
    "model": {"T": 1.0, "x0": 0.0},
    "prior": {"frame": "original"},
    "grid": {"N": 200, "M": 200, "K": 2000, "x_min": DEFAULT_BOUNDS[0], "x_max": DEFAULT_BOUNDS[1], "seed": 0},
    "solver": {
        "method": "mc",
        "workers": 1,
        "common_random_numbers": True,
        "volterra_points": 200,
        "tol": 1e-6,
        "max_iter": 500,
        "damping": 0.7,
    },
    "validate": {"n_paths": 20000, "cross_tolerance": 0.1},
    "output": {"directory": "out", "n_paths": 10000, "dump_paths": False, "dump_timechange": False},
}


@dataclass
class ExperimentConfig:
    model: GmpModel
    prior: object
    grid: SolverGrid
    solver: dict
    output: dict
    values: dict
    notes: dict = field(default_factory=dict)
    partner: object = None

    def describe(self):
        return {"sections": self.values, "notes": self.notes}


def parse_text(text, base_dir="."):
    """Parse configuration text into typed section dictionaries."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"cannot parse configuration: {exc}") from None
    values = {sec: dict(DEFAULTS.get(sec, {})) for sec in SCHEMA}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigurationError(f"unknown section [{sec}]")
        for key, raw in cp.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigurationError(f"unknown key {key!r} in section [{sec}]")
            try:
                values[sec][key] = SCHEMA[sec][key](raw)
            except ConfigurationError as exc:
                raise ConfigurationError(f"[{sec}] {key}: {exc}") from None
    values["_base_dir"] = str(base_dir)
    return values


def _curve(values, name, T, base_dir):
    m = values["model"]
    kind = m.get(f"{name}.kind")
    if kind is None:
        default = {"alpha": 0.0, "beta": 0.0, "zeta": 1.0}[name]
        return CoefficientCurve.constant(default, (0.0, T))
    if kind == "tabulated" and f"{name}.csv" in m:
        return CoefficientCurve.from_csv(Path(base_dir) / m[f"{name}.csv"], (0.0, T))
    if f"{name}.params" not in m:
        raise ConfigurationError(f"[model] {name}.params is required for kind {kind}")
    return CoefficientCurve(kind, m[f"{name}.params"], (0.0, T))


def _need(sec, key, kind):
    if key not in sec:
        raise ConfigurationError(f"[prior] {key} is required for kind {kind}")
    return sec[key]


def _prior(values, model, base_dir, section="prior"):
    p = values[section]
    if "kind" not in p:
        raise ConfigurationError("[prior] kind is required")
    kind, frame = p["kind"], p["frame"]
    notes = {}
    if kind == "dirac":
        return DiracPrior(_need(p, "z", kind), frame), notes
    if kind == "discrete":
        return DiscretePrior(_need(p, "points", kind), _need(p, "weights", kind), frame), notes
    if kind == "tabulated":
        return TabulatedPrior.from_csv(Path(base_dir) / _need(p, "csv", kind), frame), notes
    if "variance_from_model" in p:
        if "variance" in p:
            raise ConfigurationError("[prior] give either variance or variance_from_model, not both")
        v0 = variance(model, 0.0, model.T)
        var = p["variance_from_model"] * v0
        notes = {"v0_T": v0, "variance_factor": p["variance_from_model"], "prior_variance": var}
    else:
        var = _need(p, "variance", kind)
    mean = _need(p, "mean", kind)
    if kind == "gaussian":
        return GaussianPrior(mean, var, frame), notes
    lower = p.get("lower", -math.inf)
    upper = p.get("upper", math.inf)
    return TruncatedGaussianPrior(mean, var, lower, upper, frame), notes


def build_config(values):
    base_dir = values.get("_base_dir", ".")
    T, x0 = values["model"]["T"], values["model"]["x0"]
    model = GmpModel(
        _curve(values, "alpha", T, base_dir),
        _curve(values, "beta", T, base_dir),
        _curve(values, "zeta", T, base_dir),
        T,
        x0,
    )
    prior, notes = _prior(values, model, base_dir)
    partner = None
    v = values.get("validate", {})
    part = {k[len("partner."):]: val for k, val in v.items() if k.startswith("partner.")}
    if part:
        part.setdefault("frame", "original")
        partner, _ = _prior({"partner": part}, model, base_dir, "partner")
    g = values["grid"]
    if not g["x_min"] < g["x_max"]:
        raise ConfigurationError("[grid] needs x_min < x_max")
    if g["N"] < 2 or g["M"] < 2 or g["K"] < 1:
        raise ConfigurationError("[grid] needs N >= 2, M >= 2, K >= 1")
    if not g["x_min"] <= x0 <= g["x_max"]:
        raise ConfigurationError("[grid] x0 must lie inside [x_min, x_max]")
    grid = default_grid(T, g["N"], g["M"], g["K"], (g["x_min"], g["x_max"]), g["seed"])
    if values["solver"]["workers"] < 1:
        raise ConfigurationError("[solver] workers must be >= 1")
    clean = {k: v for k, v in values.items() if not k.startswith("_")}
    return ExperimentConfig(model, prior, grid, values["solver"], values["output"], clean, notes, partner)


def load(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    return build_config(parse_text(text, path.parent))


def loads(text, base_dir="."):
    return build_config(parse_text(text, base_dir))


# -- presets -------------------------------------------------------------------

_FIG1 = """\
[model]
T = 1
x0 = {x0}
alpha.kind = constant
alpha.params = 0
beta.kind = constant
beta.params = 0
zeta.kind = constant
zeta.params = 1

[prior]
kind = discrete
frame = original
points = -1, 1
weights = 0.5, 0.5

[grid]
N = 200
M = 200
K = 2000
x_min = -3
x_max = 3
seed = 0
"""

_FIG2 = """\
[model]
T = 1
x0 = 0
alpha.kind = {alpha_kind}
alpha.params = {alpha_params}
beta.kind = {beta_kind}
beta.params = {beta_params}
zeta.kind = {zeta_kind}
zeta.params = {zeta_params}

[prior]
kind = truncated_gaussian
frame = original
mean = 0
variance_from_model = 0.5
lower = 0
upper = inf

[grid]
N = 200
M = 200
K = 2000
x_min = -3
x_max = 3
seed = 0
"""

_BM = """\
[model]
T = 1
x0 = 0

[prior]
kind = {kind}
frame = original
{prior}

[grid]
N = {N}
M = {M}
K = {K}
x_min = -3
x_max = 3
seed = 0

[solver]
method = {method}
{extra}"""

PRESETS = {
    "figure1_xm1": _FIG1.format(x0=-1),
    "figure1_x0": _FIG1.format(x0=0),
    "figure1_xp1": _FIG1.format(x0=1),
    "figure2a": _FIG2.format(
        alpha_kind="sine", alpha_params="2, 10",
        beta_kind="constant", beta_params="-1",
        zeta_kind="constant", zeta_params="1",
    ),
    "figure2b": _FIG2.format(
        alpha_kind="constant", alpha_params="0",
        beta_kind="tanh-step", beta_params="-10, 0.475, 100, 0.5",
        zeta_kind="constant", zeta_params="1",
    ),
    "figure2c": _FIG2.format(
        alpha_kind="constant", alpha_params="0",
        beta_kind="constant", beta_params="-1",
        zeta_kind="polynomial-smile", zeta_params="0.25, 4, 0.5, 4",
    ),
    "bm_dirac": _BM.format(kind="dirac", prior="z = 0", N=200, M=200, K=2000, method="both", extra=""),
    "bm_gaussian": _BM.format(
        kind="gaussian", prior="mean = 0\nvariance = 0.5", N=200, M=200, K=2000, method="both", extra=""
    ),
    "ordering_pair": _BM.format(
        kind="gaussian", prior="mean = 0\nvariance = 0.5", N=100, M=100, K=2000, method="mc",
        extra="\n[validate]\npartner.kind = gaussian\npartner.mean = 0.5\npartner.variance = 0.5\n",
    ),
    "ordering_reversed": _BM.format(
        kind="gaussian", prior="mean = 0.5\nvariance = 0.5", N=100, M=100, K=2000, method="mc",
        extra="\n[validate]\npartner.kind = gaussian\npartner.mean = 0\npartner.variance = 0.5\n",
    ),
}

FIGURE_PRESETS = ("figure1_xm1", "figure1_x0", "figure1_xp1", "figure2a", "figure2b", "figure2c")


def preset(name):
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return loads(PRESETS[name])


def with_overrides(values, **sections):
    """Copy of parsed values with ``section={key: value}`` overrides applied."""
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in values.items()}
    for sec, kv in sections.items():
        out.setdefault(sec, {}).update(kv)
    return out

