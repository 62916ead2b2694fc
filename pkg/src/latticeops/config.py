"""Run configuration: JSON files validated against per-command schemas before any computation."""
from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from jsonschema import Draft202012Validator

from .errors import ValidationError


class Command(enum.Enum):
    KERNEL = "Kernel"
    CONVERGE = "Converge"
    PRICE_VAR_SWAP = "PriceVarSwap"
    PRICE_SNOWBALL = "PriceSnowball"
    PRICE_SOFT_CALL = "PriceSoftCall"
    PRICE_BASKET = "PriceBasket"
    SELF_TEST = "SelfTest"

    @classmethod
    def parse(cls, v: str) -> "Command":
        for c in cls:
            if c.value.lower() == str(v).lower():
                return c
        raise ValidationError(f"unknown command {v!r}; expected one of {[c.value for c in cls]}")


class ConfigError(ValidationError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid configuration:\n  " + "\n  ".join(problems))


_POS = {"type": "number", "exclusiveMinimum": 0}
_NUM = {"type": "number"}
_INT2 = {"type": "integer", "minimum": 2}

_LATTICE = {
    "type": "object",
    "required": ["x0", "extent", "n_points", "boundary"],
    "properties": {
        "x0": _NUM, "extent": _POS, "n_points": {"type": "integer", "minimum": 3, "maximum": 4096},
        "boundary": {"enum": ["absorbing", "reflecting", "periodic"]},
    },
    "additionalProperties": False,
}
_COEFF = {
    "type": "object",
    "required": ["mu", "sigma"],
    "properties": {"mu": _NUM, "sigma": _POS},
    "additionalProperties": False,
}
_MODEL = {
    "type": "object",
    "required": ["lattice", "coefficients"],
    "properties": {"lattice": _LATTICE, "coefficients": _COEFF},
    "additionalProperties": False,
}
_NUMERICS = {
    "type": "object",
    "properties": {
        "extra_doublings": {"type": "integer", "minimum": 0, "maximum": 40},
        "levels": {"type": "array", "items": {"type": "integer", "minimum": 4}, "minItems": 1},
        "path_bins": {"type": "integer", "minimum": 2, "maximum": 512},
        "path_bin_width": _POS,
        "conditioning_steps": {"type": "integer", "minimum": 1, "maximum": 64},
    },
    "additionalProperties": False,
}


def _obj(required, props):
    return {"type": "object", "required": required, "properties": props, "additionalProperties": False}


PRODUCTS = {
    Command.KERNEL: _obj(["maturity_years", "start_index"], {
        "maturity_years": _POS, "start_index": {"type": "integer", "minimum": 0},
        "method": {"enum": ["fast_exp", "fourier"]}}),
    Command.CONVERGE: _obj(["maturity_years"], {"maturity_years": _POS, "period": _POS, "mu": _NUM,
                                                "sigma": _POS}),
    Command.PRICE_VAR_SWAP: _obj(["maturity_years", "swap_rate", "start_index"], {
        "maturity_years": _POS, "swap_rate": _POS, "cap_factor": _POS,
        "start_index": {"type": "integer", "minimum": 0},
        "distribution": {"enum": ["chi_square", "lognormal", "pearson3"]},
        "volatility_swap_rate": _POS}),
    Command.PRICE_SNOWBALL: _obj(["period_years", "periods", "coupon_step", "coupon_bins", "factor",
                                  "phi_slope", "phi_intercept"], {
        "period_years": _POS, "periods": {"type": "integer", "minimum": 1, "maximum": 400},
        "coupon_step": _POS, "coupon_bins": _INT2, "factor": _NUM, "phi_slope": _NUM,
        "phi_intercept": _NUM, "principal": _NUM, "initial_coupon_bin": {"type": "integer", "minimum": 0},
        "start_index": {"type": "integer", "minimum": 0}}),
    Command.PRICE_SOFT_CALL: _obj(["period_years", "periods", "window", "trigger_count", "barrier",
                                   "call_price"], {
        "period_years": _POS, "periods": {"type": "integer", "minimum": 1, "maximum": 400},
        "window": {"type": "integer", "minimum": 1, "maximum": 12},
        "trigger_count": {"type": "integer", "minimum": 1}, "barrier": _NUM, "call_price": _NUM,
        "redemption": _NUM, "start_index": {"type": "integer", "minimum": 0}}),
    Command.PRICE_BASKET: _obj(["maturity_years", "strikes", "sync_weight"], {
        "maturity_years": _POS, "strikes": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
        "sync_weight": {"type": "number", "minimum": 0, "maximum": 1},
        "start_index": {"type": "integer", "minimum": 0}}),
    Command.SELF_TEST: {"type": "object"},
}


def schema_for(cmd: Command) -> dict:
    needs_model = cmd not in (Command.CONVERGE, Command.SELF_TEST)
    required = ["product"] + (["model"] if needs_model else [])
    if cmd is Command.SELF_TEST:
        required = []
    return {
        "type": "object",
        "required": required,
        "properties": {
            "command": {"type": "string"},
            "model": _MODEL,
            "product": PRODUCTS[cmd],
            "numerics": _NUMERICS,
        },
        "additionalProperties": False,
    }


@dataclass(frozen=True)
class RunConfig:
    command: Command
    model: dict
    product: dict
    numerics: dict
    digest: str


def _path(err) -> str:
    parts = [str(p) for p in err.absolute_path]
    if err.validator == "required":
        missing = err.message.split("'")[1]
        parts.append(missing)
    return "/".join(parts) or "<root>"


def validate(raw: dict, command: Command) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError(["<root>: configuration must be a JSON object"])
    problems = []
    if "command" in raw:
        try:
            if Command.parse(raw["command"]) is not command:
                problems.append(f"command: config says {raw['command']!r} but {command.value} was requested")
        except ValidationError as exc:
            problems.append(f"command: {exc}")
    validator = Draft202012Validator(schema_for(command))
    for err in sorted(validator.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path))):
        problems.append(f"{_path(err)}: {err.message}")
    if problems:
        raise ConfigError(problems)
    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return RunConfig(command, raw.get("model", {}), raw.get("product", {}), raw.get("numerics", {}),
                     hashlib.sha256(canonical.encode()).hexdigest())


def load(path: str | Path, command: Command) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError([f"<file>: cannot read {path}: {exc}"]) from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"<file>: not valid JSON ({exc})"]) from None
    return validate(raw, command)
