"""
Experiment configuration: JSON documents validated against a shipped schema.

Unknown keys are rejected.  Missing keys fall back to a case preset
(``case1``: durations 5..10, m = 10; ``case2``: durations 7..15, m = 15) with
WL CUSUM windows equal to the longest duration and FMA windows equal to the
shortest one.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources

import jsonschema

from .calibrate import ARLTarget, CalibrationSpec, LCPFATarget
from .model import DurationPrior, GaussianChangeModel
from .reproduce import CASE1, CASE2, Budgets, Case

__all__ = ["ExperimentConfig", "RuleConfig", "ConfigError", "load_config", "config_schema", "SCHEMA_VERSION"]

SCHEMA_VERSION = 1
_PRESETS = {"case1": CASE1, "case2": CASE2}
_DEFAULT_EVALUATOR = {"cusum": "ie", "wl_cusum": "mc", "fma": "mc", "mfma": "mc"}


class ConfigError(ValueError):
    """Configuration failed schema or consistency checks."""


def config_schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("schemas/config.schema.json").read_text())


@dataclass(frozen=True)
class RuleConfig:
    rule: str
    window: int | None
    evaluator: str
    threshold: float | None = None
    skip_warmup: bool = False

    def detector_kwargs(self) -> dict:
        return {"skip_warmup": True} if self.skip_warmup else {}


@dataclass(frozen=True)
class ExperimentConfig:
    model: GaussianChangeModel
    prior: DurationPrior
    m: int
    rules: tuple
    lcpfa_targets: tuple = ()
    arl_targets: tuple = ()
    budgets: Budgets = field(default_factory=Budgets)
    seed: int = 0
    grid_size: int = 10_000
    thresholds_file: str | None = None
    simulate: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    @property
    def case(self) -> Case:
        return Case("config", tuple(self.prior.support), self.m)

    def specs(self):
        """Calibration specs for every (rule, target) pair."""
        out = []
        for r in self.rules:
            for a in self.lcpfa_targets:
                out.append((r, CalibrationSpec(r.rule, LCPFATarget(a, self.m), r.window, r.evaluator, skip_warmup=r.skip_warmup)))
            for g in self.arl_targets:
                ev = "ie" if r.rule == "cusum" else ("mc" if r.evaluator in ("bound", "ie") else r.evaluator)
                out.append((r, CalibrationSpec(r.rule, ARLTarget(g), r.window, ev, skip_warmup=r.skip_warmup)))
        return out

    @property
    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()


def _resolve(doc: dict) -> dict:
    preset = _PRESETS[doc.get("case", "case1")]
    durations = doc.get("durations", list(preset.durations))
    m = doc.get("m", preset.m)
    case = Case("config", tuple(sorted(durations)), m)
    rules = doc.get("rules") or [{"rule": r} for r in ("wl_cusum", "cusum", "fma", "mfma")]
    resolved_rules = []
    for r in rules:
        kind = r["rule"]
        window = r.get("window", case.window(kind))
        resolved_rules.append({
            "rule": kind,
            "window": window,
            "evaluator": r.get("evaluator", _DEFAULT_EVALUATOR[kind]),
            "threshold": r.get("threshold"),
            "skip_warmup": bool(r.get("skip_warmup", False)),
        })
    targets = doc.get("targets", {"lcpfa": [0.1, 0.05, 0.02, 0.01]})
    return {
        "schema_version": SCHEMA_VERSION,
        "model": {"mu": 1.0, "sigma": 1.0} | doc.get("model", {}),
        "durations": sorted(durations),
        "weights": doc.get("weights"),
        "m": m,
        "targets": {"lcpfa": list(targets.get("lcpfa", [])), "arl": list(targets.get("arl", []))},
        "rules": resolved_rules,
        "budgets": {k: getattr(Budgets(), k) for k in ("lcpfa", "lpd", "arl", "qq", "table4_arl")} | doc.get("budgets", {}),
        "seed": doc.get("seed", 0),
        "grid_size": doc.get("grid_size", 10_000),
        "thresholds_file": doc.get("thresholds_file"),
        "simulate": {"runs": 10_000, "horizon": 1000, "nu": None, "duration": None} | doc.get("simulate", {}),
    }


def load_config(doc: dict | str | None = None, *, seed: int | None = None, budget_scale: float = 1.0) -> ExperimentConfig:
    """Validate a config document (dict, JSON path or ``None`` for defaults)."""
    if doc is None:
        doc = {"schema_version": SCHEMA_VERSION}
    elif isinstance(doc, str):
        with open(doc) as fh:
            doc = json.load(fh)
    try:
        jsonschema.validate(doc, config_schema())
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid config: {exc.message} at {'/'.join(map(str, exc.absolute_path)) or '<root>'}") from None
    raw = _resolve(doc)
    if seed is not None:
        raw["seed"] = int(seed)
    try:
        model = GaussianChangeModel(**raw["model"])
        if raw["weights"] is None:
            prior = DurationPrior.uniform(raw["durations"])
        else:
            if len(raw["weights"]) != len(raw["durations"]):
                raise ConfigError("weights and durations differ in length")
            prior = DurationPrior(dict(zip(raw["durations"], raw["weights"])))
        rules = tuple(RuleConfig(**r) for r in raw["rules"])
        for r in rules:
            if r.rule == "cusum" and r.window is not None:
                raise ConfigError("cusum takes no window")
            if r.rule != "cusum" and r.window is None:
                raise ConfigError(f"{r.rule} needs a window")
            if r.skip_warmup and r.rule != "fma":
                raise ConfigError("skip_warmup applies to fma only")
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    budgets = Budgets(**raw["budgets"], scale=float(budget_scale))
    return ExperimentConfig(
        model=model,
        prior=prior,
        m=raw["m"],
        rules=rules,
        lcpfa_targets=tuple(raw["targets"]["lcpfa"]),
        arl_targets=tuple(raw["targets"]["arl"]),
        budgets=budgets,
        seed=raw["seed"],
        grid_size=raw["grid_size"],
        thresholds_file=raw["thresholds_file"],
        simulate=raw["simulate"],
        raw=raw,
    )
