"""Run configuration: YAML file -> validated model + experiment settings.

Keys and units (times in years, rates per year, log-prices natural log)::

    seed: 12345                 # unsigned 64-bit master seed
    output_dir: runs/example    # created by the CLI; must not exist unless --force
    model:
      T: 1.0                    # horizon [years]
      n: 1024                   # number of time steps on [0, T]
      y0: 0.3                   # initial volatility [1/sqrt(year)]
      x0: 0.0                   # initial log-price
      r: 0.0                    # risk-free rate [1/year]
      rho: -0.7                 # leverage correlation, |rho| < 1
      kernel:
        family: PowerSum        # or Tabulated, or Zero (constant-volatility reduction)
        alphas: [0.05]          # PowerSum coefficients, > 0
        hursts: [0.1]           # PowerSum exponents in (0, 1), increasing
        # Tabulated: csv: path/to/kernel.csv (header t,s,k), effective_H: 0.3
      bounds:
        phi: 0.05               # lower bound; number or {kind, c0, c1, amp, freq, phase}
        psi: 1.0                # upper bound; same forms
      drift:
        enabled: true           # false: b = a only (degenerate, no bounds enforced)
        theta1: 0.01            # barrier weights; number or time-function mapping
        theta2: 0.01
        gamma1: 2.5             # barrier exponents, (B1) requires > 1/H - 1
        gamma2: 2.5
        a: {kind: zero}         # zero | affine {a0, a1} | mean_reversion {speed, level}
      check_assumptions: true   # false skips the (B1) exponent check only
    experiment:                 # command-specific, see README
      n_paths: 100

Every violation is reported as a ValidationError carrying the dotted key.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import InvalidArgumentError, ValidationError
from .rng import check_seed
from .sandwich import AFunction, BoundFunctions, SandwichDrift, SandwichModel, TimeFunction
from .volterra import KernelSpec, TimeGrid, load_tabulated_csv

__all__ = ["RunConfig", "load_config", "parse_config", "build_model", "model_to_dict"]

_MODEL_KEYS = {"T", "n", "y0", "x0", "r", "rho", "kernel", "bounds", "drift", "check_assumptions"}
_DRIFT_KEYS = {"enabled", "theta1", "theta2", "gamma1", "gamma2", "a"}


@dataclass(eq=False)
class RunConfig:
    model: SandwichModel
    experiment: dict
    seed: int
    output_dir: Path
    raw: dict = field(repr=False, default_factory=dict)
    source: Path | None = None

    def digest_payload(self, command: str) -> dict:
        """Everything that determines a run's output, for hashing."""
        return {"command": command, "seed": self.seed, "model": model_to_dict(self.model),
                "experiment": self.experiment}


def _num(v, key, integer=False):
    """YAML 1.1 reads '1e-9' as a string; accept any numeric spelling."""
    if isinstance(v, bool) or v is None:
        raise ValidationError(f"expected a number, got {v!r}", key)
    try:
        x = float(v)
    except (TypeError, ValueError):
        raise ValidationError(f"expected a number, got {v!r}", key) from None
    if not math.isfinite(x):
        raise ValidationError(f"must be finite, got {v!r}", key)
    if integer:
        if x != int(x):
            raise ValidationError(f"expected an integer, got {v!r}", key)
        return int(x)
    return x


def _mapping(d, key):
    if not isinstance(d, dict):
        raise ValidationError(f"expected a mapping, got {type(d).__name__}", key)
    return d


def _unknown(d, allowed, key):
    extra = sorted(set(d) - allowed)
    if extra:
        raise ValidationError(f"unknown keys {extra}", key)


def _time_function(v, key) -> TimeFunction:
    if isinstance(v, dict):
        d = {k: (val if k == "kind" else _num(val, f"{key}.{k}")) for k, val in v.items()}
        try:
            return TimeFunction.from_dict(d)
        except (InvalidArgumentError, TypeError) as exc:
            raise ValidationError(str(exc), key) from None
    return TimeFunction.constant(_num(v, key))


def _kernel(d, base: Path | None) -> KernelSpec:
    d = _mapping(d, "model.kernel")
    family = d.get("family", "PowerSum")
    try:
        if family == "PowerSum":
            _unknown(d, {"family", "alphas", "hursts"}, "model.kernel")
            alphas = [_num(a, "model.kernel.alphas") for a in _as_list(d.get("alphas"), "model.kernel.alphas")]
            hursts = [_num(h, "model.kernel.hursts") for h in _as_list(d.get("hursts"), "model.kernel.hursts")]
            if any(not 0 < h < 1 for h in hursts):
                raise ValidationError(f"(K2) every H_k must lie in (0, 1), got {hursts}", "model.kernel.hursts")
            if any(not a > 0 for a in alphas):
                raise ValidationError(f"(K1) coefficients must be positive, got {alphas}", "model.kernel.alphas")
            return KernelSpec.power_sum(alphas, hursts)
        if family == "Tabulated":
            _unknown(d, {"family", "csv", "effective_H"}, "model.kernel")
            H = _num(d.get("effective_H"), "model.kernel.effective_H")
            if not 0 < H < 1:
                raise ValidationError(f"(K2) effective_H must lie in (0, 1), got {H}", "model.kernel.effective_H")
            if "csv" not in d:
                raise ValidationError("Tabulated kernel needs a 'csv' path", "model.kernel.csv")
            path = Path(d["csv"])
            if base is not None and not path.is_absolute():
                path = base / path
            return load_tabulated_csv(path, H)
    except ValidationError:
        raise
    except InvalidArgumentError as exc:
        raise ValidationError(f"(K1)/(K2) {exc}", "model.kernel") from None
    if family == "Zero":
        _unknown(d, {"family", "effective_H"}, "model.kernel")
        H = _num(d.get("effective_H", 0.5), "model.kernel.effective_H")
        if not 0 < H < 1:
            raise ValidationError(f"(K2) effective_H must lie in (0, 1), got {H}", "model.kernel.effective_H")
        return KernelSpec.zero(H)
    raise ValidationError(f"unknown kernel family {family!r} (PowerSum | Tabulated | Zero)", "model.kernel.family")


def _as_list(v, key):
    if isinstance(v, (int, float, str)):
        return [v]
    if not isinstance(v, list) or not v:
        raise ValidationError("expected a non-empty list", key)
    return v


def _drift(d) -> SandwichDrift:
    d = _mapping(d or {}, "model.drift")
    _unknown(d, _DRIFT_KEYS, "model.drift")
    a_cfg = d.get("a")
    try:
        a = AFunction.from_dict(
            None if a_cfg is None else {k: (v if k == "kind" else _num(v, f"model.drift.a.{k}"))
                                        for k, v in _mapping(a_cfg, "model.drift.a").items()}
        )
    except (InvalidArgumentError, KeyError, TypeError) as exc:
        raise ValidationError(f"(B3)/(B4) bad a-function: {exc}", "model.drift.a") from None
    if not d.get("enabled", True):
        return SandwichDrift.disabled(a)
    for k in ("theta1", "theta2", "gamma1", "gamma2"):
        if k not in d:
            raise ValidationError("required when the drift is enabled", f"model.drift.{k}")
    return SandwichDrift(
        _time_function(d["theta1"], "model.drift.theta1"),
        _time_function(d["theta2"], "model.drift.theta2"),
        _num(d["gamma1"], "model.drift.gamma1"),
        _num(d["gamma2"], "model.drift.gamma2"),
        a,
    )


def build_model(d: dict, base: Path | None = None) -> SandwichModel:
    """Validated SandwichModel from the ``model`` section."""
    d = _mapping(d, "model")
    _unknown(d, _MODEL_KEYS, "model")
    for k in ("T", "n", "y0"):
        if k not in d:
            raise ValidationError("required key missing", f"model.{k}")
    T = _num(d["T"], "model.T")
    n = _num(d["n"], "model.n", integer=True)
    if not T > 0:
        raise ValidationError(f"must be positive, got {T}", "model.T")
    if n < 2:
        raise ValidationError(f"must be >= 2, got {n}", "model.n")
    kernel = _kernel(d.get("kernel", {}), base)
    b = _mapping(d.get("bounds", {}), "model.bounds")
    _unknown(b, {"phi", "psi"}, "model.bounds")
    bounds = BoundFunctions(
        _time_function(b.get("phi", 0.05), "model.bounds.phi"), _time_function(b.get("psi", 1.0), "model.bounds.psi")
    )
    drift = _drift(d.get("drift"))
    rho = _num(d.get("rho", 0.0), "model.rho")
    try:
        return SandwichModel(
            kernel, bounds, drift, _num(d["y0"], "model.y0"), TimeGrid(T, n),
            x0=_num(d.get("x0", 0.0), "model.x0"), r=_num(d.get("r", 0.0), "model.r"), rho=rho,
            check_assumptions=bool(d.get("check_assumptions", True)),
        )
    except ValidationError as exc:
        msg = str(exc)[len(exc.field) + 2 :] if exc.field else str(exc)
        key = exc.field or "model"
        raise ValidationError(msg, key if key.startswith("model") else f"model.{key}") from None


def model_to_dict(model: SandwichModel) -> dict:
    d = model.drift
    return {
        "T": model.grid.T,
        "n": model.grid.n,
        "y0": model.y0,
        "x0": model.x0,
        "r": model.r,
        "rho": model.rho,
        "kernel": model.kernel.to_dict(),
        "bounds": {"phi": model.bounds.phi.to_dict(), "psi": model.bounds.psi.to_dict()},
        "drift": {
            "enabled": not (d.lower_on is False and d.upper_on is False),
            "theta1": d.theta1.to_dict() if d.theta1 else None,
            "theta2": d.theta2.to_dict() if d.theta2 else None,
            "gamma1": d.gamma1,
            "gamma2": d.gamma2,
            "a": d.a.to_dict(),
        },
        "check_assumptions": model.check_assumptions,
    }


def parse_config(raw: dict, base: Path | None = None, source: Path | None = None) -> RunConfig:
    raw = _mapping(raw, "<root>")
    _unknown(raw, {"seed", "output_dir", "model", "experiment"}, "<root>")
    if "model" not in raw:
        raise ValidationError("required section missing", "model")
    try:
        seed = check_seed(_num(raw.get("seed", 0), "seed", integer=True))
    except InvalidArgumentError as exc:
        raise ValidationError(str(exc), "seed") from None
    model = build_model(raw["model"], base)
    experiment = copy.deepcopy(_mapping(raw.get("experiment") or {}, "experiment"))
    try:
        json.dumps(experiment)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"must hold plain data: {exc}", "experiment") from None
    out = Path(raw.get("output_dir", "svvlab_out"))
    return RunConfig(model, experiment, seed, out, raw, source)


def load_config(path) -> RunConfig:
    """Parse and validate a YAML run configuration."""
    path = Path(path)
    text = path.read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ValidationError(f"malformed YAML at {where}: {getattr(exc, 'problem', exc)}", str(path)) from None
    if raw is None:
        raise ValidationError("empty configuration", str(path))
    return parse_config(raw, base=path.parent, source=path)
