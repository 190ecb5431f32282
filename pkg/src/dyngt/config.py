"""Experiment configuration: flat JSON files, validation and named presets."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

from .engine import Cca, Dorfman, IidParams
from .epidemic import SbmParams
from .objectives import CostParams
from .protocols import CcaConfig, QuarantinePolicy


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    model: str = "sbm"
    N: int = 1000
    C: Optional[int] = None
    q1: Optional[float] = None
    q2: Optional[float] = None
    p_init: Optional[float] = None
    r: float = 0.0
    p: Optional[float] = None
    protocol: str = "dorfman"
    policy: str = "none"
    a: Optional[float] = None
    alpha: Optional[float] = None
    sizing: str = "horizon"
    rule: str = "mu_log"
    c: float = 1.6
    delta: float = 0.0
    t: int = 50
    trajectories: int = 1
    seed: int = 0
    out: str = "out"
    per_trajectory: bool = False
    preset: Optional[str] = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.model not in ("sbm", "iid"):
            raise ConfigError(f"model: must be 'sbm' or 'iid', got {self.model!r}")
        if self.protocol not in ("dorfman", "cca"):
            raise ConfigError(f"protocol: must be 'dorfman' or 'cca', got {self.protocol!r}")
        _positive_int(self.N, "N")
        _positive_int(self.t, "t")
        _positive_int(self.trajectories, "trajectories")
        if self.model == "sbm":
            for name in ("C", "q1", "q2", "p_init"):
                if getattr(self, name) is None:
                    raise ConfigError(f"{name}: required for the sbm model")
            _positive_int(self.C, "C")
            if self.N % self.C:
                raise ConfigError("C: community size must divide population")
            for name in ("q1", "q2", "p_init", "r"):
                _prob(getattr(self, name), name)
            if self.q2 > self.q1:
                raise ConfigError("q2: must not exceed q1")
        else:
            if self.p is None:
                raise ConfigError("p: required for the iid model")
            _prob(self.p, "p")
        if self.protocol == "dorfman":
            if self.policy not in QuarantinePolicy.VARIANTS:
                raise ConfigError(f"policy: unknown quarantine policy {self.policy!r}")
            if self.policy == "cost_aware":
                if self.a is None or not self.a > 1:
                    raise ConfigError("a: must exceed 1 for the cost_aware policy")
                if self.alpha is None or not self.alpha >= 0:
                    raise ConfigError("alpha: must be nonnegative for the cost_aware policy")
            if self.sizing not in ("horizon", "static"):
                raise ConfigError(f"sizing: must be 'horizon' or 'static', got {self.sizing!r}")
        else:
            if self.rule not in ("mu_log", "pn_log"):
                raise ConfigError(f"rule: must be 'mu_log' or 'pn_log', got {self.rule!r}")
            if not self.c > 0:
                raise ConfigError("c: budget constant must be positive")
            if not self.delta >= 0:
                raise ConfigError("delta: must be nonnegative")
            if self.rule == "pn_log" and self.model != "iid":
                raise ConfigError("rule: pn_log needs the iid model's p")

    def build_model(self):
        if self.model == "sbm":
            return SbmParams(self.N, self.C, self.q1, self.q2, self.p_init, self.r)
        return IidParams(self.N, self.p)

    def build_protocol(self):
        if self.protocol == "cca":
            return Cca(CcaConfig(self.rule, self.c, self.delta))
        cost = CostParams(self.a, self.alpha) if self.policy == "cost_aware" else None
        return Dorfman(QuarantinePolicy(self.policy, cost), self.sizing)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown keys: {', '.join(unknown)}")
        data = dict(data)
        if "model" not in data:
            sbm_keys = {"C", "q1", "q2", "p_init"}
            data["model"] = "sbm" if sbm_keys & set(data) else "iid"
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def _positive_int(v, name):
    if not isinstance(v, int) or isinstance(v, bool) or v < 1:
        raise ConfigError(f"{name}: must be a positive integer, got {v!r}")


def _prob(v, name):
    if not isinstance(v, (int, float)) or isinstance(v, bool) or not 0 <= v <= 1:
        raise ConfigError(f"{name}: must be a probability in [0, 1], got {v!r}")


def parse_config(source) -> ExperimentConfig:
    """Read a config from a path, a JSON string or a dict."""
    if isinstance(source, dict):
        return ExperimentConfig.from_dict(source)
    text = str(source)
    if not text.lstrip().startswith("{"):
        text = Path(source).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    if data.get("preset") is not None:
        # explicit keys override the preset's values
        data = {**preset(data["preset"]).to_dict(), **data}
    return ExperimentConfig.from_dict(data)


_SBM = dict(model="sbm", N=1000, C=50, q1=0.012, q2=0.0004, p_init=0.02, r=0.1, t=50)

PRESETS: dict[str, dict] = {
    # fig1 is a cost table, not a simulation; a/alpha are its only parameters
    "fig1": dict(model="iid", N=1000, p=0.01, policy="cost_aware", a=1.3, alpha=2.0, t=1),
    "fig2": dict(_SBM, protocol="cca", rule="mu_log", c=1.6, trajectories=200),
    "fig3": dict(_SBM, protocol="dorfman", policy="none", trajectories=1000),
    "fig4": dict(_SBM, protocol="dorfman", policy="quarantine", trajectories=1000),
    "fig5-sbm-costaware": dict(
        _SBM, protocol="dorfman", policy="cost_aware", a=1.5, alpha=2.0, trajectories=1000
    ),
    "fig5-iid": dict(model="iid", N=1000, p=0.12, t=20, protocol="dorfman",
                     sizing="horizon", trajectories=1000),
    "fig6": dict(model="iid", N=1000, p=0.035, t=50, protocol="cca", rule="pn_log",
                 c=0.8, trajectories=100),
    "fig7": dict(model="iid", N=1000, p=0.035, t=50, protocol="cca", rule="pn_log",
                 c=0.7, trajectories=100),
}


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return ExperimentConfig.from_dict(dict(PRESETS[name], preset=name))
