"""Sectioned ``key = value`` experiment configuration.

Every key has a parser, a default (or is required) and a canonical text
form, so ``serialize(parse(text))`` is a normal form of ``text`` and its
hash identifies every random draw of a run.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, fields, replace

from .coding import NOISE_CONVENTIONS
from .engine import DEADLINE_STRATEGIES, STRATEGIES, THEOREM
from .errors import ConfigError
from .network import (
    REFERENCE_DOWNLINK_BPS,
    REFERENCE_ERASURE,
    REFERENCE_SERVER_MACR,
)

AUTO = "auto"
REQUIRED = object()


# ------------------------------------------------------------ value codecs

def _int(text):
    return int(text)


def _float(text):
    value = float(text)
    if value != value or value in (float("inf"), float("-inf")):
        raise ValueError("must be finite")
    return value


def _bool(text):
    low = text.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError("expected true or false")


def _str(text):
    return text.strip()


def _or_auto(inner):
    def parse(text):
        return AUTO if text.strip().lower() == AUTO else inner(text)
    return parse


def _list(inner):
    def parse(text):
        items = [t for t in text.replace(",", " ").split() if t]
        if not items:
            raise ValueError("expected a comma-separated list")
        return tuple(inner(t) for t in items)
    return parse


def _lr(text):
    if text.strip().lower() == THEOREM:
        return THEOREM
    value = _float(text)
    if value <= 0:
        raise ValueError("constant learning rate must be positive")
    return value


def _choice(options):
    def parse(text):
        text = text.strip()
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return parse


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


# key: (parser, default)
SCHEMA = {
    "experiment": {
        "seed": (_int, 0),
    },
    "data": {
        "m": (_int, 400),
        "d": (_int, 10),
        "o": (_int, 1),
        "n": (_int, 20),
        "noise_std": (_float, 0.1),
        "ground_truth_scale": (_float, 1.0),
        "skew": (_bool, True),
        "feature_file": (_str, None),
        "rffm": (_bool, False),
        "rffm_dim": (_int, 64),
        "rffm_bandwidth": (_float, 1.0),
        "phi": (_or_auto(_float), AUTO),
    },
    "coding": {
        "c": (_int, 100),
        "sigma": (_float, None),
        "target_epsilon": (_float, None),
        "noise_convention": (_choice(NOISE_CONVENTIONS), NOISE_CONVENTIONS[0]),
    },
    "network": {
        "profile": (_choice(("sample", "explicit")), "sample"),
        "downlink_rate": (_float, REFERENCE_DOWNLINK_BPS),
        "server_mac_rate": (_float, REFERENCE_SERVER_MACR),
        "erasure_prob": (_float, REFERENCE_ERASURE),
        "n_mac_per_sample": (_or_auto(_float), AUTO),
        "payload_bits": (_or_auto(_float), AUTO),
        "model_bits": (_or_auto(_float), AUTO),
        "mac_rates": (_list(_float), None),
        "uplink_rates": (_list(_float), None),
        "erasure_probs": (_list(_float), None),
    },
    "strategy": {
        "kind": (_choice(STRATEGIES), REQUIRED),
        "server_batch": (_or_auto(_int), AUTO),
        "client_batch": (_or_auto(_list(_int)), AUTO),
        "psi": (_float, 0.0),
        "learning_rate": (_lr, THEOREM),
        "project": (_or_auto(_bool), AUTO),
    },
    "run": {
        "epochs": (_int, REQUIRED),
        "deadline": (_float, None),
        "output_dir": (_str, "out"),
    },
    "verify": {
        "trials": (_int, 10_000),
        "network_trials": (_int, 100_000),
        "lemma1_m": (_int, 2),
        "lemma1_n": (_int, 3),
        "lemma1_d": (_int, 3),
        "lemma1_c": (_int, 100),
        "lemma1_l": (_int, 10),
        "lemma1_b": (_int, 5),
        "lemma1_bs": (_int, 50),
    },
}

SWEEP_AXES = {
    "sigma": ("coding", "sigma"),
    "target_epsilon": ("coding", "target_epsilon"),
    "T": ("run", "deadline"),
    "deadline": ("run", "deadline"),
    "b_s": ("strategy", "server_batch"),
    "server_batch": ("strategy", "server_batch"),
    "psi": ("strategy", "psi"),
    "c": ("coding", "c"),
}


def _section_class(name, keys):
    return dataclass(frozen=True)(type(name, (), {"__annotations__": {k: object for k in keys}}))


ExperimentSection = _section_class("ExperimentSection", SCHEMA["experiment"])
DataSection = _section_class("DataSection", SCHEMA["data"])
CodingSection = _section_class("CodingSection", SCHEMA["coding"])
NetworkSection = _section_class("NetworkSection", SCHEMA["network"])
StrategySection = _section_class("StrategySection", SCHEMA["strategy"])
RunSection = _section_class("RunSection", SCHEMA["run"])
VerifySection = _section_class("VerifySection", SCHEMA["verify"])

_SECTION_TYPES = {
    "experiment": ExperimentSection,
    "data": DataSection,
    "coding": CodingSection,
    "network": NetworkSection,
    "strategy": StrategySection,
    "run": RunSection,
    "verify": VerifySection,
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: ExperimentSection
    data: DataSection
    coding: CodingSection
    network: NetworkSection
    strategy: StrategySection
    run: RunSection
    verify: VerifySection

    @property
    def seed(self) -> int:
        return self.experiment.seed

    def with_value(self, section: str, key: str, value) -> "ExperimentConfig":
        sec = replace(getattr(self, section), **{key: value})
        cfg = replace(self, **{section: sec})
        if (section, key) == ("coding", "sigma") and value is not None:
            cfg = cfg.with_value("coding", "target_epsilon", None)
        elif (section, key) == ("coding", "target_epsilon") and value is not None:
            cfg = cfg.with_value("coding", "sigma", None)
        validate(cfg)
        return cfg

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return self.with_value("experiment", "seed", int(seed))

    def as_dict(self) -> dict:
        return {name: {f.name: getattr(getattr(self, name), f.name)
                       for f in fields(getattr(self, name))}
                for name in SCHEMA}


def parse_text(text: str, source: str = "<config>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc

    values = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError("unknown section", key=section)
        for key in cp[section]:
            if key not in SCHEMA[section]:
                raise ConfigError("unknown key", key=f"{section}.{key}")
    for section, keys in SCHEMA.items():
        values[section] = {}
        for key, (parser, default) in keys.items():
            raw = cp.get(section, key, fallback=None) if cp.has_section(section) else None
            if raw is None or raw.strip() == "":
                if default is REQUIRED:
                    raise ConfigError("missing required key", key=f"{section}.{key}")
                values[section][key] = default
                continue
            try:
                values[section][key] = parser(raw)
            except ValueError as exc:
                raise ConfigError(f"invalid value {raw!r} ({exc})", key=f"{section}.{key}") from exc
    cfg = ExperimentConfig(**{s: _SECTION_TYPES[s](**v) for s, v in values.items()})
    validate(cfg)
    return cfg


def parse_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_text(fh.read(), source=str(path))


def _require(cond, key, rule):
    if not cond:
        raise ConfigError(rule, key=key)


def validate(cfg: ExperimentConfig) -> None:
    d, c, s, net, r = cfg.data, cfg.coding, cfg.strategy, cfg.network, cfg.run
    _require(cfg.seed >= 0, "experiment.seed", "must be nonnegative")
    for key in ("m", "d", "o", "n"):
        _require(getattr(d, key) >= 1, f"data.{key}", "must be positive")
    _require(d.feature_file or d.n <= d.m, "data.n", "cannot exceed data.m")
    _require(d.noise_std >= 0, "data.noise_std", "must be nonnegative")
    _require(d.rffm_dim >= 1, "data.rffm_dim", "must be positive")
    _require(d.rffm_bandwidth > 0, "data.rffm_bandwidth", "must be positive")
    _require(d.phi == AUTO or d.phi > 0, "data.phi", "must be positive")

    _require((c.sigma is None) != (c.target_epsilon is None), "coding.sigma",
             "exactly one of coding.sigma and coding.target_epsilon must be set")
    _require(c.c >= 1, "coding.c", "must be positive")
    _require(c.sigma is None or c.sigma >= 0, "coding.sigma", "must be nonnegative")
    _require(c.target_epsilon is None or c.target_epsilon > 0, "coding.target_epsilon",
             "must be positive")

    for key in ("downlink_rate", "server_mac_rate"):
        _require(getattr(net, key) > 0, f"network.{key}", "must be positive")
    _require(0 <= net.erasure_prob < 1, "network.erasure_prob", "must lie in [0, 1)")
    for key in ("n_mac_per_sample", "payload_bits", "model_bits"):
        v = getattr(net, key)
        _require(v == AUTO or v >= 0, f"network.{key}", "must be nonnegative")
    if net.profile == "explicit":
        for key in ("mac_rates", "uplink_rates"):
            v = getattr(net, key)
            _require(v is not None and len(v) == d.n, f"network.{key}",
                     "explicit profile needs one value per client")
            _require(all(x > 0 for x in v), f"network.{key}", "rates must be positive")
    if net.erasure_probs is not None:
        _require(len(net.erasure_probs) == d.n, "network.erasure_probs", "needs one value per client")
        _require(all(0 <= p < 1 for p in net.erasure_probs), "network.erasure_probs",
                 "must lie in [0, 1)")

    _require(s.server_batch == AUTO or 1 <= s.server_batch <= c.c, "strategy.server_batch",
             "must lie in [1, coding.c]")
    if s.client_batch != AUTO:
        _require(len(s.client_batch) in (1, d.n), "strategy.client_batch",
                 "give one batch size or one per client")
        _require(all(b >= 1 for b in s.client_batch), "strategy.client_batch", "must be positive")
    _require(0 <= s.psi < 1, "strategy.psi", "must lie in [0, 1)")

    _require(r.epochs >= 0, "run.epochs", "must be nonnegative")
    _require(r.deadline is None or r.deadline > 0, "run.deadline", "must be positive")
    if s.kind in DEADLINE_STRATEGIES:
        _require(r.deadline is not None, "run.deadline", f"required for strategy {s.kind}")

    v = cfg.verify
    _require(v.trials >= 2 and v.network_trials >= 2, "verify.trials", "need at least 2 trials")
    _require(1 <= v.lemma1_bs <= v.lemma1_c, "verify.lemma1_bs", "must lie in [1, lemma1_c]")
    _require(1 <= v.lemma1_b <= v.lemma1_l, "verify.lemma1_b", "must lie in [1, lemma1_l]")


def serialize(cfg: ExperimentConfig, include_output: bool = True) -> str:
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        sec = getattr(cfg, section)
        for key in keys:
            if section == "run" and key == "output_dir" and not include_output:
                continue
            value = getattr(sec, key)
            if value is None:
                continue
            lines.append(f"{key} = {_fmt(value)}")
        lines.append("")
    return "\n".join(lines)


def config_hash(cfg: ExperimentConfig) -> str:
    """SHA-256 of the normal form, ignoring where outputs are written."""
    return hashlib.sha256(serialize(cfg, include_output=False).encode("utf-8")).hexdigest()


def parse_axis_value(axis: str, text: str):
    if axis not in SWEEP_AXES:
        raise ConfigError(f"not sweepable; choose from {', '.join(sorted(SWEEP_AXES))}",
                          key=axis)
    section, key = SWEEP_AXES[axis]
    parser = SCHEMA[section][key][0]
    try:
        return parser(text)
    except ValueError as exc:
        raise ConfigError(f"invalid sweep value {text!r} ({exc})", key=f"{section}.{key}") from exc
