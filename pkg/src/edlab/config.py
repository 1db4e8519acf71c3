"""Run configuration: INI-style ``key = value`` files with sections.

Every section and key is whitelisted; anything unknown is rejected with its
line number. Defaults are listed in ``DEFAULTS``.

    [scenario]   name, plus x0 / sigma0 / k0 / omega / a / c as the scenario needs
    [potential]  kind, omega, height, width, center, separation, opening
    [model]      class (quantum | hybrid), hbar, masses, eta_tilde, epsilon (one value or a list)
    [grid]       dims, points, extent
    [run]        T, dt, walkers, record_every, seed, substeps, track, scheme (euler | heun)
"""

from __future__ import annotations

import configparser
import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .core import SCENARIOS, Grid, ModelParams, PotentialSpec, build_grid, init_scenario
from .ensemble import MAX_SUBSTEPS, SCHEMES

SCENARIO_KEYS = {
    "gaussian": {"x0", "sigma0", "k0"},
    "coherent": {"x0", "omega"},
    "two-gaussian-superposition": {"a", "sigma0", "k0"},
    "two-particle-correlated-gaussian": {"c", "sigma0"},
}

DEFAULTS = {
    "scenario": {"name": "gaussian"},
    "potential": {"kind": "free", "omega": "1.0", "height": "0.0", "width": "1.0", "center": "0.0",
                  "separation": "2.0", "opening": "0.3"},
    "model": {"class": "quantum", "hbar": "1.0", "masses": "1.0", "eta_tilde": "1.0", "epsilon": "1.0"},
    "grid": {"dims": "1", "points": "1024", "extent": "40.0"},
    "run": {"T": "1.0", "dt": "1e-3", "walkers": "10000", "record_every": "100", "seed": "12345",
            "substeps": "1", "track": "0", "scheme": "euler"},
}


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        self.line = line
        self.key = key
        where = f"line {line}: " if line else ""
        super().__init__(f"{where}{message}")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in re.split(r"[,\s]+", text.strip()) if t)


@dataclass(frozen=True)
class RunConfig:
    scenario: str
    scenario_params: dict
    potential: dict
    model_class: str
    hbar: float
    masses: tuple[float, ...]
    eta_tilde: float
    epsilons: tuple[float, ...]
    dims: int
    points: int
    extent: float
    T: float
    dt: float
    walkers: int
    record_every: int
    seed: int
    substeps: int = 1
    track: int = 0
    scheme: str = "euler"
    source: str = field(default="", compare=False)

    # ------------------------------------------------------------ builders

    def params(self, epsilon: float | None = None) -> ModelParams:
        eps = self.epsilons[0] if epsilon is None else epsilon
        kw = dict(masses=self.masses, epsilon=eps, eta_tilde=self.eta_tilde, dt=self.dt)
        if self.model_class == "quantum":
            return ModelParams.quantum(hbar=self.hbar, **kw)
        return ModelParams.hybrid(hbar=self.hbar, **kw)

    def grid(self) -> Grid:
        return build_grid(self.dims, self.points, self.extent)

    def potential_spec(self) -> PotentialSpec:
        return PotentialSpec(**self.potential)

    def initial_state(self, grid: Grid | None = None):
        return init_scenario(self.scenario, grid or self.grid(), self.params(), **self.scenario_params)

    def to_dict(self) -> dict:
        return {
            "scenario": {"name": self.scenario, **self.scenario_params},
            "potential": dict(self.potential),
            "model": {"class": self.model_class, "hbar": self.hbar, "masses": list(self.masses),
                      "eta_tilde": self.eta_tilde, "epsilon": list(self.epsilons)},
            "grid": {"dims": self.dims, "points": self.points, "extent": self.extent},
            "run": {"T": self.T, "dt": self.dt, "walkers": self.walkers, "record_every": self.record_every,
                    "seed": self.seed, "substeps": self.substeps, "track": self.track,
                    "scheme": self.scheme},
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_seed(self, seed: int) -> "RunConfig":
        from dataclasses import replace

        return replace(self, seed=int(seed))


def _locate(text: str, section: str, key: str | None) -> int | None:
    current = None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return n
            continue
        if current == section and key is not None and re.match(rf"{re.escape(key)}\s*[=:]", line, re.I):
            return n
    return None


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc), getattr(exc, "lineno", None)) from exc

    for section in cp.sections():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown section [{section}]", _locate(text, section, None))

    def get(section, key):
        return cp.get(section, key) if cp.has_option(section, key) else DEFAULTS[section].get(key)

    def fail(section, key, msg):
        raise ConfigError(f"[{section}] {key}: {msg}", _locate(text, section, key), key)

    name = get("scenario", "name")
    if name not in SCENARIOS:
        fail("scenario", "name", f"unknown scenario {name!r}")
    allowed = {
        "scenario": {"name"} | SCENARIO_KEYS[name],
        "potential": set(DEFAULTS["potential"]),
        "model": set(DEFAULTS["model"]),
        "grid": set(DEFAULTS["grid"]),
        "run": set(DEFAULTS["run"]),
    }
    for section in cp.sections():
        for key in cp.options(section):
            if key not in allowed[section]:
                fail(section, key, "unknown key")

    def num(section, key, cast=float):
        raw = get(section, key)
        try:
            return cast(float(raw)) if cast is int else cast(raw)
        except (TypeError, ValueError):
            fail(section, key, f"cannot parse {raw!r}")

    scen = {}
    for key in sorted(SCENARIO_KEYS[name]):
        if cp.has_option("scenario", key):
            vals = _floats(cp.get("scenario", key))
            scen[key] = vals[0] if len(vals) == 1 else vals

    kind = get("potential", "kind")
    if kind not in PotentialSpec.KINDS or kind == "tabulated":
        fail("potential", "kind", f"unsupported potential {kind!r}")
    pot = {"kind": kind}
    for key in ("omega", "height", "width", "center", "separation", "opening"):
        vals = _floats(get("potential", key))
        pot[key] = vals[0] if len(vals) == 1 else vals

    klass = get("model", "class")
    if klass not in ("quantum", "hybrid"):
        fail("model", "class", f"must be quantum or hybrid, got {klass!r}")
    try:
        epsilons = _floats(get("model", "epsilon"))
        masses = _floats(get("model", "masses"))
    except ValueError as exc:
        fail("model", "epsilon", str(exc))
    if not epsilons:
        fail("model", "epsilon", "at least one value required")
    if any(e < 0 for e in epsilons):
        fail("model", "epsilon", "epsilon must be non-negative")

    scheme = get("run", "scheme")
    if scheme not in SCHEMES:
        fail("run", "scheme", f"must be one of {SCHEMES}, got {scheme!r}")

    cfg = RunConfig(
        scenario=name, scenario_params=scen, potential=pot, model_class=klass,
        hbar=num("model", "hbar"), masses=masses, eta_tilde=num("model", "eta_tilde"), epsilons=epsilons,
        dims=num("grid", "dims", int), points=num("grid", "points", int), extent=num("grid", "extent"),
        T=num("run", "T"), dt=num("run", "dt"), walkers=num("run", "walkers", int),
        record_every=num("run", "record_every", int), seed=num("run", "seed", int),
        substeps=num("run", "substeps", int), track=num("run", "track", int), scheme=scheme, source=source,
    )
    # surface domain errors (bad masses, grids, scenarios) at parse time
    try:
        for e in cfg.epsilons:
            cfg.params(e)
        cfg.initial_state()
        cfg.potential_spec()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.walkers < 1 or cfg.record_every < 1 or cfg.T <= 0:
        raise ConfigError("[run] walkers, record_every and T must be positive")
    if not 1 <= cfg.substeps <= MAX_SUBSTEPS:
        fail("run", "substeps", f"must lie in [1, {MAX_SUBSTEPS}]")
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(), source=str(path))
