"""Run configuration: a single JSON document driving every command.

The document has optional sections for the three rate components, the
simulation design, the fit settings, and output placement.  Defaults
reproduce the reference study, so an empty document ``{}`` is a complete
configuration.  Validation is strict: unknown keys anywhere are rejected
before any computation starts.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from jsonschema import Draft202012Validator

from idmodds.fit import FitConfig
from idmodds.quadrature import QuadratureConfig
from idmodds.rates import (
    ExponentialIncidence,
    GompertzParams,
    MortalityRatioParams,
    PositivePartIncidence,
    RateModel,
    TabulatedIncidence,
)
from idmodds.simulate import DEFAULT_AGE_GROUPS, SimConfig

__all__ = ["ConfigError", "RunConfig", "load_run_config", "parse_run_config", "config_hash"]


class ConfigError(ValueError):
    """Configuration file is missing, unparsable, or violates the schema."""


_PAIR = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_TRIPLE = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}

_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "incidence": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "family": {"enum": ["positive_part", "exponential", "tabulated"]},
                "onset_age": {"type": "number"},
                "denominator": {"type": "number", "exclusiveMinimum": 0},
                "k0": {"type": "number"},
                "k1": {"type": "number"},
                "k2": {"type": "number"},
                "times": {"type": "array", "items": {"type": "number"}, "minItems": 2},
                "ages": {"type": "array", "items": {"type": "number"}, "minItems": 2},
                "table": {"type": "array", "items": {"type": "array", "items": {"type": "number", "minimum": 0}}},
            },
        },
        "m0": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "xi1": {"type": "number"},
                "xi2": {"type": "number"},
                "xi3": {"type": "number"},
            },
        },
        "ratio": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "gamma1": {"type": "number"},
                "gamma2": {"type": "number"},
                "gamma3": {"type": "number"},
                "max_duration": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "simulation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "births_per_year": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "birth_window": _PAIR,
                "cross_section_time": {"type": "number"},
                "age_groups": {"type": "array", "items": _PAIR, "minItems": 1},
                "rng_seed": {"type": "integer", "minimum": 0},
                "max_age": {"type": "number", "exclusiveMinimum": 0},
                "target_alive": {"type": "integer", "exclusiveMinimum": 0},
            },
        },
        "fit": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "bounds": {"type": "array", "items": _PAIR, "minItems": 3, "maxItems": 3},
                "starts": {"type": "array", "items": _TRIPLE, "minItems": 1},
                "fixed_gamma": {
                    "type": "array",
                    "items": {"type": ["number", "null"]},
                    "minItems": 3,
                    "maxItems": 3,
                },
                "group_evaluation": {"enum": ["midpoint", "averaged"]},
                "xatol": {"type": "number", "exclusiveMinimum": 0},
                "fatol": {"type": "number", "exclusiveMinimum": 0},
                "max_iterations": {"type": "integer", "exclusiveMinimum": 0},
                "include_binomial_coefficient": {"type": "boolean"},
                "hessian_step_scale": {"type": "number", "exclusiveMinimum": 0},
                "quadrature": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "rel_tol": {"type": "number", "exclusiveMinimum": 0},
                        "abs_tol": {"type": "number", "exclusiveMinimum": 0},
                        "max_subdivisions": {"type": "integer", "exclusiveMinimum": 0},
                    },
                },
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "directory": {"type": "string", "minLength": 1},
            },
        },
    },
}

_VALIDATOR = Draft202012Validator(_SCHEMA)


def config_hash(document: dict) -> str:
    """Hash of the canonical JSON serialization, for provenance records."""
    canonical = json.dumps(document, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _build_incidence(section: dict):
    family = section.get("family", "positive_part")
    if family == "positive_part":
        allowed = {"family", "onset_age", "denominator"}
        extra = set(section) - allowed
        if extra:
            raise ConfigError(f"incidence keys {sorted(extra)} do not apply to family 'positive_part'")
        return PositivePartIncidence(
            onset_age=section.get("onset_age", 30.0),
            denominator=section.get("denominator", 3000.0),
        )
    if family == "exponential":
        allowed = {"family", "k0", "k1", "k2"}
        extra = set(section) - allowed
        if extra:
            raise ConfigError(f"incidence keys {sorted(extra)} do not apply to family 'exponential'")
        return ExponentialIncidence(section.get("k0", -9.0), section.get("k1", 0.03), section.get("k2", 0.0))
    allowed = {"family", "times", "ages", "table"}
    extra = set(section) - allowed
    if extra:
        raise ConfigError(f"incidence keys {sorted(extra)} do not apply to family 'tabulated'")
    for key in ("times", "ages", "table"):
        if key not in section:
            raise ConfigError(f"tabulated incidence requires '{key}'")
    return TabulatedIncidence(
        times=np.asarray(section["times"], dtype=float),
        ages=np.asarray(section["ages"], dtype=float),
        table=np.asarray(section["table"], dtype=float),
    )


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration document plus convenience builders."""

    document: dict
    source_path: Optional[str] = None

    @property
    def hash(self) -> str:
        return config_hash(self.document)

    @property
    def output_directory(self) -> str:
        return self.document.get("output", {}).get("directory", "idm_odds_out")

    @property
    def declares_ratio(self) -> bool:
        """Whether the document spells out mortality-ratio parameters.

        A declared ratio doubles as the known simulation input when fitting
        simulated data, and is echoed in fit reports.
        """
        section = self.document.get("ratio", {})
        return any(key in section for key in ("gamma1", "gamma2", "gamma3"))

    def build_incidence(self):
        return _build_incidence(self.document.get("incidence", {}))

    def build_m0(self) -> GompertzParams:
        section = self.document.get("m0", {})
        return GompertzParams(
            section.get("xi1", -10.7),
            section.get("xi2", 0.1),
            section.get("xi3", math.log(0.998)),
        )

    def build_ratio(self) -> MortalityRatioParams:
        section = self.document.get("ratio", {})
        return MortalityRatioParams(
            section.get("gamma1", 0.04),
            section.get("gamma2", 5.0),
            section.get("gamma3", 1.0),
            max_duration=section.get("max_duration", 100.0),
        )

    def declared_gamma(self):
        if not self.declares_ratio:
            return None
        ratio = self.build_ratio()
        return (ratio.gamma1, ratio.gamma2, ratio.gamma3)

    def build_model(self) -> RateModel:
        try:
            return RateModel(self.build_incidence(), self.build_m0(), self.build_ratio())
        except ValueError as error:
            raise ConfigError(str(error)) from error

    def build_sim_config(self) -> SimConfig:
        section = self.document.get("simulation", {})
        groups = section.get("age_groups")
        try:
            return SimConfig(
                births_per_year=section.get("births_per_year"),
                birth_window=tuple(section.get("birth_window", (0.0, 65.0))),
                cross_section_time=section.get("cross_section_time", 100.0),
                age_groups=DEFAULT_AGE_GROUPS if groups is None else tuple(tuple(g) for g in groups),
                rng_seed=section.get("rng_seed", 0),
                max_age=section.get("max_age", 110.0),
                target_alive=section.get("target_alive", 74388),
            )
        except ValueError as error:
            raise ConfigError(str(error)) from error

    def build_fit_config(self) -> FitConfig:
        section = dict(self.document.get("fit", {}))
        kwargs = {}
        if "quadrature" in section:
            quad = section.pop("quadrature")
            kwargs["quadrature"] = QuadratureConfig(
                rel_tol=quad.get("rel_tol", 1e-10),
                abs_tol=quad.get("abs_tol", 1e-14),
                max_subdivisions=quad.get("max_subdivisions", 400),
            )
        if "bounds" in section:
            kwargs["bounds"] = tuple(tuple(b) for b in section.pop("bounds"))
        if "starts" in section:
            kwargs["starts"] = tuple(tuple(s) for s in section.pop("starts"))
        if "fixed_gamma" in section:
            kwargs["fixed_gamma"] = tuple(section.pop("fixed_gamma"))
        kwargs.update(section)
        try:
            return FitConfig(incidence=self.build_incidence(), m0=self.build_m0(), **kwargs)
        except ValueError as error:
            raise ConfigError(str(error)) from error


def parse_run_config(document: dict, source_path: Optional[str] = None) -> RunConfig:
    """Validate a configuration dictionary and wrap it."""
    if not isinstance(document, dict):
        raise ConfigError("configuration must be a JSON object")
    errors = sorted(_VALIDATOR.iter_errors(document), key=lambda e: list(e.absolute_path))
    if errors:
        first = errors[0]
        location = "/".join(str(part) for part in first.absolute_path) or "<root>"
        raise ConfigError(f"invalid configuration at {location}: {first.message}")
    config = RunConfig(document=document, source_path=source_path)
    # exercise the builders so structural problems surface before any command runs
    config.build_model()
    config.build_sim_config()
    config.build_fit_config()
    return config


def load_run_config(path: str) -> RunConfig:
    """Read and validate a configuration file."""
    try:
        with open(path, "r", encoding="utf-8") as stream:
            document = json.load(stream)
    except FileNotFoundError as error:
        raise ConfigError(f"configuration file not found: {path}") from error
    except json.JSONDecodeError as error:
        raise ConfigError(f"configuration is not valid JSON ({path}, line {error.lineno}): {error.msg}") from error
    return parse_run_config(document, source_path=path)
