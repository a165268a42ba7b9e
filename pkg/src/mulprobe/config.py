"""Run configuration: JSON file, validation with field paths, stable hash."""
from __future__ import annotations

import copy
import hashlib
import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .arith import PAPER_TEMPLATES, DigitTemplate
from .cost import CostParams
from .render import Representation, StyleConfig


class ConfigError(ValueError):
    pass


_ENV = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")
# Only credential fields may reference the environment.
_INTERPOLATED = {"api_key"}

DEFAULTS = {
    "seed": 0,
    "output_dir": "run",
    "suite_count": 200,
    "templates": list(PAPER_TEMPLATES),
    "paper_mode": True,
    "hds_count": 1000,
    "trap_count": 30,
    "perturbation_count": 30,
    "trace_count": 1000,
    "cost_params": CostParams().to_dict(),
    "eval_representations": ["numeral_text", "word_text", "numeral_image", "word_image"],
    "probe_representations": ["numeral_text", "numeral_image"],
    "probe_split": "test",
    "probe_limit": None,
    "bank_profile": "balanced",
    "image_format": "png",
    "style": StyleConfig().to_dict(),
    "budget": 2048,
    "backend": {"kind": "mock", "generation": {"kind": "accuracy", "p": 0.02, "seed": 0},
                "scoring": {"kind": "hash", "seed": 0}},
    "probe_backend": None,
    "parallelism": 1,
    "max_retries": 3,
    "failure_threshold": 0.1,
}


@dataclass
class RunConfig:
    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    def __getattr__(self, name):
        try:
            return self.__dict__["data"][name]
        except KeyError:
            raise AttributeError(name) from None

    @property
    def cost(self) -> CostParams:
        return CostParams.from_dict(self.data["cost_params"])

    @property
    def style_config(self) -> StyleConfig:
        return StyleConfig(**self.data["style"])

    @property
    def out(self) -> Path:
        return Path(self.data["output_dir"])

    def hash(self) -> str:
        """Hash over everything except credentials and the output location."""
        d = copy.deepcopy(self.data)
        d.pop("output_dir", None)
        for key in ("backend", "probe_backend"):
            if isinstance(d.get(key), dict):
                d[key].pop("api_key", None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def backend_config(self, stage: str = "eval") -> dict:
        cfg = self.data["probe_backend"] if stage == "probe" and self.data["probe_backend"] else self.data["backend"]
        cfg = _interpolate(cfg)
        if cfg.get("kind") == "http":
            cfg.setdefault("max_retries", self.data["max_retries"])
        return cfg


def _interpolate(obj, key: Optional[str] = None):
    if isinstance(obj, dict):
        return {k: _interpolate(v, k) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_interpolate(v) for v in obj]
    if isinstance(obj, str) and key in _INTERPOLATED:
        def sub(m):
            if m.group(1) not in os.environ:
                raise ConfigError(f"backend.{key}: environment variable {m.group(1)} is unset")
            return os.environ[m.group(1)]
        return _ENV.sub(sub, obj)
    return obj


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        p = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"{p}: unknown field")
        if isinstance(base[k], dict) and isinstance(v, dict) and k not in ("backend", "probe_backend"):
            out[k] = _merge(base[k], v, p + ".")
        else:
            out[k] = v
    return out


def _positive_int(d: dict, key: str, minimum: int = 1) -> None:
    v = d[key]
    if not isinstance(v, int) or isinstance(v, bool) or v < minimum:
        raise ConfigError(f"{key}: must be an integer >= {minimum}, got {v!r}")


def validate(d: dict) -> None:
    _positive_int(d, "seed", 0)
    for key in ("suite_count", "trap_count", "perturbation_count", "trace_count", "budget", "parallelism"):
        _positive_int(d, key)
    _positive_int(d, "hds_count", 3)
    _positive_int(d, "max_retries", 0)
    if d["probe_limit"] is not None:
        _positive_int(d, "probe_limit")
    if not d["templates"]:
        raise ConfigError("templates: at least one template required")
    for i, t in enumerate(d["templates"]):
        try:
            for part in str(t).replace("x", "×").split("×"):
                DigitTemplate(part)
        except ValueError as exc:
            raise ConfigError(f"templates[{i}]: {exc}") from None
    for key in ("eval_representations", "probe_representations"):
        for i, r in enumerate(d[key]):
            try:
                Representation(r)
            except ValueError:
                raise ConfigError(f"{key}[{i}]: unknown representation {r!r}") from None
    for i, r in enumerate(d["probe_representations"]):
        if Representation(r) is Representation.AUDIO:
            raise ConfigError(f"probe_representations[{i}]: audio scoring is not supported")
    if d["probe_split"] not in ("train", "val", "test"):
        raise ConfigError(f"probe_split: must be train, val or test, got {d['probe_split']!r}")
    if d["bank_profile"] not in ("balanced", "style_mismatch"):
        raise ConfigError(f"bank_profile: unknown profile {d['bank_profile']!r}")
    if d["image_format"] not in ("png", "svg"):
        raise ConfigError(f"image_format: must be png or svg, got {d['image_format']!r}")
    if not 0.0 <= float(d["failure_threshold"]) <= 1.0:
        raise ConfigError("failure_threshold: must lie in [0, 1]")
    try:
        CostParams.from_dict(d["cost_params"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"cost_params: {exc}") from None
    if float(d["cost_params"].get("margin_min", 1.0)) <= 0:
        raise ConfigError("cost_params.margin_min: must be > 0")
    try:
        StyleConfig(**d["style"])
    except TypeError as exc:
        raise ConfigError(f"style: {exc}") from None
    for key in ("backend", "probe_backend"):
        b = d[key]
        if b is None and key == "probe_backend":
            continue
        if not isinstance(b, dict) or b.get("kind") not in ("mock", "http"):
            raise ConfigError(f"{key}.kind: must be 'mock' or 'http'")
        for k, v in b.items():
            if isinstance(v, str) and _ENV.search(v) and k not in _INTERPOLATED:
                raise ConfigError(f"{key}.{k}: environment interpolation is only allowed in credential fields")


def load_config(path=None, overrides: Optional[dict] = None) -> RunConfig:
    data = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            user = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"{path}: config file not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be an object")
        user.pop("_header", None)
        data = _merge(data, user)
    if overrides:
        data = _merge(data, {k: v for k, v in overrides.items() if v is not None})
    validate(data)
    return RunConfig(data)
