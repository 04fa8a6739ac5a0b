"""Run configuration: flat ``key = value`` files with typed, validated keys."""

import hashlib
import math
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, Optional, Tuple

from .basis import BasisSpec
from .errors import ConfigError


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _float(text: str) -> float:
    low = text.strip().lower()
    if low in ("inf", "infinity", "none"):
        return math.inf
    return float(text)


def _ints(text: str) -> Tuple[int, ...]:
    return tuple(int(x) for x in text.replace(" ", "").split(",") if x)


def _floats(text: str) -> Tuple[float, ...]:
    return tuple(float(x) for x in text.replace(" ", "").split(",") if x)


def _optional(parse):
    def inner(text):
        return None if text.strip() in ("", "none") else parse(text)
    return inner


def _choice(*options):
    def inner(text):
        if text not in options:
            raise ValueError(f"expected one of {options}")
        return text
    return inner


# key -> (parser, default text)
KEYS: Dict[str, Tuple[Callable[[str], Any], str]] = {
    "input.observations": (str, ""),
    "input.geometry": (str, ""),
    "input.curves": (str, ""),
    "output.dir": (str, "."),
    "curves.min_complete_years": (int, "50"),
    "curves.max_missing_days_per_year": (int, "0"),
    "curves.year_start": (_optional(int), ""),
    "curves.year_end": (_optional(int), ""),
    "curves.allow_negative": (_bool, "false"),
    "basis.kind": (_choice("bspline", "fourier"), "bspline"),
    "basis.q": (int, "12"),
    "basis.order": (int, "4"),
    "basis.knots": (_optional(_floats), ""),
    "basis.lattice_size": (int, "365"),
    "graph.k": (int, "5"),
    "graph.elevation_cutoff_m": (_float, "1000"),
    "graph.weight_scheme": (_choice("binary_cutoff", "exp_decay"), "binary_cutoff"),
    "graph.exp_decay_h_m": (float, "1000"),
    "graph.export_edges": (_bool, "false"),
    "mrf.theta_init": (float, "0.5"),
    "mrf.theta_bounds": (_floats, "0,10"),
    "mrf.scan_order": (_choice("ascending", "random"), "ascending"),
    "mrf.estimate_theta": (_bool, "true"),
    "fit.clusters": (_ints, "3"),
    "fit.max_iter": (int, "100"),
    "fit.icm_sweeps_per_iter": (int, "3"),
    "fit.tol": (float, "1e-6"),
    "fit.seed": (int, "0"),
    "fit.restarts": (int, "5"),
    "fit.random_effects": (_bool, "true"),
    "sim.n_sites": (int, "400"),
    "sim.clusters": (int, "3"),
    "sim.theta": (float, "1.0"),
    "sim.sigma2": (float, "1.0"),
    "sim.gamma_scale": (float, "0.3"),
    "sim.separation": (float, "6.0"),
    "sim.baseline": (float, "8.0"),
    "sim.burn_in": (int, "200"),
    "sim.seed": (int, "0"),
    "sim.year": (int, "2001"),
    "sim.elevation_max_m": (float, "1500"),
}


class RunConfig:
    """Typed view over configuration text; unknown keys are rejected."""

    def __init__(self, raw: Optional[Dict[str, str]] = None):
        self.raw: Dict[str, str] = {k: d for k, (_, d) in KEYS.items()}
        self.values: Dict[str, Any] = {}
        for key, text in (raw or {}).items():
            self.set(key, text)
        for key in KEYS:
            if key not in self.values:
                self.set(key, self.raw[key])

    def set(self, key: str, text: str):
        key = key.strip()
        if key not in KEYS:
            raise ConfigError(f"unknown configuration key {key!r}")
        parse, _ = KEYS[key]
        text = str(text).strip()
        try:
            self.values[key] = parse(text)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {text!r} ({exc})") from None
        self.raw[key] = text

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def load(cls, path=None, overrides: Iterable[str] = ()) -> "RunConfig":
        raw: Dict[str, str] = {}
        if path is not None:
            raw.update(parse_config_text(Path(path).read_text(encoding="utf-8"), str(path)))
        for item in overrides:
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"override {item!r} is not key=value")
            raw[key.strip()] = value.strip()
        return cls(raw)

    def digest(self) -> str:
        # where results are written does not change them
        text = "\n".join(f"{k}={self.raw[k]}" for k in sorted(self.raw) if k != "output.dir")
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    def basis(self) -> BasisSpec:
        knots = self["basis.knots"]
        return BasisSpec(
            kind=self["basis.kind"],
            q=self["basis.q"],
            order=self["basis.order"],
            knots=tuple(knots) if knots else None,
        )


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{n}: expected 'key = value'")
        key = key.strip()
        if key not in KEYS:
            raise ConfigError(f"{source}:{n}: unknown configuration key {key!r}")
        out[key] = value.strip()
    return out
