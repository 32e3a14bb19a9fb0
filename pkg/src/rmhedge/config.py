"""Scenario configuration files (TOML or JSON)."""
from __future__ import annotations

import json
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .presets import DIVIDEND_FAMILIES, MODEL_FAMILIES

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

DEFAULT_TOLERANCES = {
    "mc_sigma": 3.0,           # MC agreement in standard errors
    "pide_rel": 0.005,         # PIDE vs closed form, relative
    "rank_threshold": 1e-12,   # pseudo-inverse truncation
    "max_probe_flags": 1,
}

_NUMERIC_KEYS = {
    "seed", "paths", "dt", "pide_dt", "theta", "rannacher", "store_every", "grid", "y0", "c0",
    "probes", "perturbations", "perturbation_scale", "chunk_size", "export_levels", "tolerances",
    "mc_paths", "mc_dt", "antithetic",
}
_OUTPUT_KEYS = {"dir", "artifacts", "max_paths_csv"}
ARTIFACTS = ("validation", "value", "hedge", "paths", "martingale", "risk", "attainability", "probes",
             "credit_hedge")


@dataclass
class ScenarioConfig:
    model_family: str
    model_params: dict
    dividend_family: str
    dividend_params: dict
    numerics: dict
    outputs: dict = field(default_factory=dict)
    source: str = ""

    @property
    def seed(self) -> int:
        return int(self.numerics["seed"])

    @property
    def tolerances(self) -> dict:
        return DEFAULT_TOLERANCES | dict(self.numerics.get("tolerances", {}))

    def to_dict(self) -> dict:
        return {"model": {"family": self.model_family, "params": self.model_params},
                "dividend": {"family": self.dividend_family, "params": self.dividend_params},
                "numerics": self.numerics, "outputs": self.outputs}


def _line_of(text: str, key: str):
    leaf = key.split(".")[-1]
    pat = re.compile(rf'^[ \t]*"?{re.escape(leaf)}"?[ \t]*[=:]', re.M)
    m = pat.search(text)
    if m is None:
        head = key.split(".")[0]
        m = re.search(rf'^[ \t]*\[{re.escape(head)}\]|"{re.escape(head)}"\s*:', text, re.M)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _parse_text(text: str, kind: str) -> dict:
    if kind == "json":
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"invalid TOML: {exc}", line=int(m.group(1)) if m else None) from None


def parse_config(text: str, kind: str = "toml", source: str = "<string>") -> ScenarioConfig:
    raw = _parse_text(text, kind)
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a table")

    def need(table, key, where):
        if not isinstance(table, dict) or key not in table:
            raise ConfigError(f"missing required key '{where}'", key=where, line=_line_of(text, where))
        return table[key]

    for top in raw:
        if top not in ("model", "dividend", "numerics", "outputs"):
            raise ConfigError(f"unknown section '{top}'", key=top, line=_line_of(text, top))
    model = need(raw, "model", "model")
    fam = need(model, "family", "model.family")
    if fam not in MODEL_FAMILIES:
        raise ConfigError(f"unknown model family '{fam}'", key="model.family", line=_line_of(text, "model.family"))
    div = need(raw, "dividend", "dividend")
    dfam = need(div, "family", "dividend.family")
    if dfam not in DIVIDEND_FAMILIES:
        raise ConfigError(f"unknown dividend family '{dfam}'", key="dividend.family",
                          line=_line_of(text, "dividend.family"))
    num = need(raw, "numerics", "numerics")
    if not isinstance(num, dict):
        raise ConfigError("numerics must be a table", key="numerics", line=_line_of(text, "numerics"))
    seed = need(num, "seed", "numerics.seed")
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a nonnegative integer", key="numerics.seed", line=_line_of(text, "numerics.seed"))
    for k, val in num.items():
        if k not in _NUMERIC_KEYS:
            raise ConfigError(f"unknown numerics key '{k}'", key=f"numerics.{k}", line=_line_of(text, f"numerics.{k}"))
        if k in ("paths", "dt", "pide_dt", "store_every", "chunk_size", "mc_paths", "mc_dt", "export_levels",
                 "perturbation_scale"):
            if isinstance(val, bool) or not isinstance(val, (int, float)) or not val > 0:
                raise ConfigError(f"numerics.{k} must be positive", key=f"numerics.{k}",
                                  line=_line_of(text, f"numerics.{k}"))
    if "y0" not in num:
        raise ConfigError("missing required key 'numerics.y0'", key="numerics.y0", line=_line_of(text, "numerics"))
    tol = num.get("tolerances", {})
    for k in tol:
        if k not in DEFAULT_TOLERANCES:
            raise ConfigError(f"unknown tolerance '{k}'", key=f"numerics.tolerances.{k}",
                              line=_line_of(text, f"numerics.tolerances.{k}"))
    out = raw.get("outputs", {})
    for k in out:
        if k not in _OUTPUT_KEYS:
            raise ConfigError(f"unknown outputs key '{k}'", key=f"outputs.{k}", line=_line_of(text, f"outputs.{k}"))
    for a in out.get("artifacts", ARTIFACTS):
        if a not in ARTIFACTS:
            raise ConfigError(f"unknown artifact '{a}'", key="outputs.artifacts", line=_line_of(text, "outputs.artifacts"))
    return ScenarioConfig(fam, dict(model.get("params", {})), dfam, dict(div.get("params", {})),
                          dict(num), dict(out), source)


def load_config(path) -> ScenarioConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {p}: {exc.strerror}") from None
    kind = "json" if p.suffix.lower() == ".json" else "toml"
    return parse_config(text, kind, str(p))
