"""Experiment configuration: INI text with sections.

Example::

    [domain]
    curve = circle
    center = 2, 0
    radius = 1

    [weight]
    expr = x1

    [continue]
    seed = ansatz:3,0:1,0
    lambda_start = 0.1
    lambda_end = 0.001
    lambda_factor = 0.316227766

Unknown sections or keys are errors, reported with the offending line.
"""
from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .geometry import WeightError, from_expression, make_curve
from .solver import Seed, lambda_schedule

STEPS = ("mesh", "spectrum", "green", "ansatz", "solve", "continue", "diagnose", "axisym", "report")


class ConfigError(ValueError):
    pass


def _floats(text, n=None):
    vals = tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())
    if n is not None and len(vals) != n:
        raise ValueError(f"expected {n} numbers, got {len(vals)}")
    return vals


def _points(text):
    """'3,0; 1,0' -> ((3.0, 0.0), (1.0, 0.0))."""
    out = []
    for part in text.split(";"):
        if part.strip():
            out.append(_floats(part, 2))
    return tuple(out)


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text):
    return int(text) if text.strip() else None


@dataclass
class DomainSpec:
    curve: str = "circle"
    center: tuple = (0.0, 0.0)
    radius: float = 1.0
    ax: float = 1.0
    ay: float = 0.5
    r0: float = 1.0
    modes: tuple = ()
    file: str = ""

    def build(self):
        params = {"center": self.center, "radius": self.radius, "ax": self.ax, "ay": self.ay, "r0": self.r0}
        if self.modes:
            params["modes"] = self.modes
        if self.file:
            params["file"] = self.file
        return make_curve(self.curve, **params)


@dataclass
class MeshSpec:
    h: tuple = (0.1, 0.05, 0.025)      # Green/Robin ladder, each level half the previous
    solve_h: float = 0.05
    grade: float = 0.01                # local h at predicted points for non-ansatz seeds
    edges_per_width: int = 8
    mirror: bool = True
    symmetry: int | None = None


@dataclass
class SpectrumSpec:
    count: int = 6
    h: float = 0.0                     # 0: use mesh.solve_h


@dataclass
class GreenSpec:
    sources: tuple = ()                # empty: C1-stable critical points of a
    normalization: str = "unweighted"


@dataclass
class AnsatzSpec:
    lambdas: tuple = (1e-1, 1e-2, 1e-3)
    sigma: float = 0.1
    mis_scale: float = 4.0
    h: float = 0.1


@dataclass
class SolveSpec:
    lam: float = 0.05
    tol: float = 1e-10
    max_iter: int = 40


@dataclass
class ContinueSpec:
    seed: str = "trivial"
    lambda_start: float = 0.1
    lambda_end: float = 1e-3
    lambda_factor: float = 10 ** -0.5
    max_bisections: int = 6
    deflate: tuple = ()                # branch directories of known solutions

    def schedule(self):
        return lambda_schedule(self.lambda_start, self.lambda_end, self.lambda_factor)


@dataclass
class DiagnoseSpec:
    peak_factor: float = 5.0
    support_fraction: float = 1e-3
    fit_radius: float = 10.0


@dataclass
class AxisymSpec:
    grid: float = 0.1
    exclude: float = 0.75
    csv_grid: float = 0.2


@dataclass
class RunSpec:
    steps: tuple = ("mesh", "spectrum", "green", "ansatz", "continue", "diagnose", "report")
    out: str = "out"
    threads: int = 1


_PARSERS = {float: float, int: int, str: str, bool: _bool}


@dataclass
class ExperimentConfig:
    domain: DomainSpec = field(default_factory=DomainSpec)
    weight: str = "one"
    mesh: MeshSpec = field(default_factory=MeshSpec)
    spectrum: SpectrumSpec = field(default_factory=SpectrumSpec)
    green: GreenSpec = field(default_factory=GreenSpec)
    ansatz: AnsatzSpec = field(default_factory=AnsatzSpec)
    solve: SolveSpec = field(default_factory=SolveSpec)
    cont: ContinueSpec = field(default_factory=ContinueSpec)
    diagnose: DiagnoseSpec = field(default_factory=DiagnoseSpec)
    axisym: AxisymSpec = field(default_factory=AxisymSpec)
    run: RunSpec = field(default_factory=RunSpec)
    checks: dict = field(default_factory=dict)       # the [assert] block, raw strings
    text: str = ""
    base_dir: str = "."
    overrides: dict = field(default_factory=dict)   # CLI overrides, kept so a manifest can replay them

    @property
    def seed(self) -> Seed:
        return Seed.parse(self.cont.seed)

    def curve(self):
        return self.domain.build()

    def weight_field(self):
        return from_expression(self.weight)

    def digest(self):
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()

    def validate(self):
        h = self.mesh.h
        if not h or any(not b < a for a, b in zip(h, h[1:])):
            raise ConfigError("[mesh] h: ladder must be strictly decreasing")
        if any(abs(a / b - 2) > 1e-9 for a, b in zip(h, h[1:])):
            raise ConfigError("[mesh] h: each ladder level must halve the previous one")
        if h[-1] <= 0 or self.mesh.solve_h <= 0:
            raise ConfigError("[mesh] mesh sizes must be positive")
        try:
            self.cont.schedule()
        except ValueError as exc:
            raise ConfigError(f"[continue] schedule: {exc}") from None
        if any(not b < a for a, b in zip(self.ansatz.lambdas, self.ansatz.lambdas[1:])):
            raise ConfigError("[ansatz] lambdas: schedule must be strictly decreasing")
        try:
            self.seed
        except ValueError as exc:
            raise ConfigError(f"[continue] seed: {exc}") from None
        if self.domain.file and not os.path.exists(self._path(self.domain.file)):
            raise ConfigError(f"[domain] file: {self.domain.file} does not exist")
        for d in self.cont.deflate:
            if not os.path.exists(os.path.join(self._path(d), "branch.json")):
                raise ConfigError(f"[continue] deflate: no branch.json in {d}")
        unknown = [s for s in self.run.steps if s not in STEPS]
        if unknown:
            raise ConfigError(f"[run] steps: unknown step(s) {unknown}")
        try:
            self.weight_field()
        except (WeightError, SyntaxError, ValueError) as exc:
            raise ConfigError(f"[weight] expr: {exc}") from None
        try:
            self.curve()
        except Exception as exc:
            raise ConfigError(f"[domain]: {exc}") from None
        return self

    def _path(self, p):
        return p if os.path.isabs(p) else os.path.join(self.base_dir, p)

    def with_overrides(self, **kw):
        """CLI overrides: out, threads, seed, lambda_start, lambda_end, lambda_factor, deflate."""
        cfg = replace(self, run=replace(self.run), cont=replace(self.cont), overrides=dict(self.overrides))
        for k in ("seed", "lambda_start", "lambda_end", "lambda_factor", "deflate"):
            if kw.get(k) is not None and kw.get(k) != []:
                cfg.overrides[k] = [os.path.abspath(d) for d in kw[k]] if k == "deflate" else kw[k]
        if kw.get("out") is not None:
            cfg.run.out = kw["out"]
        if kw.get("threads") is not None:
            cfg.run.threads = int(kw["threads"])
        if kw.get("seed") is not None:
            cfg.cont.seed = kw["seed"]
        for k in ("lambda_start", "lambda_end", "lambda_factor"):
            if kw.get(k) is not None:
                setattr(cfg.cont, k, float(kw[k]))
        if kw.get("deflate"):
            cfg.cont.deflate = tuple(cfg.overrides["deflate"])
        return cfg.validate()


# section name -> (attribute, dataclass, custom key parsers)
_SECTIONS = {
    "domain": ("domain", DomainSpec, {"center": lambda s: _floats(s, 2),
                                      "modes": lambda s: tuple((int(a), float(b)) for a, b in
                                                               (_floats(p, 2) for p in s.split(";") if p.strip()))}),
    "mesh": ("mesh", MeshSpec, {"h": _floats, "symmetry": _opt_int}),
    "spectrum": ("spectrum", SpectrumSpec, {}),
    "green": ("green", GreenSpec, {"sources": _points}),
    "ansatz": ("ansatz", AnsatzSpec, {"lambdas": _floats}),
    "solve": ("solve", SolveSpec, {"lambda": None}),
    "continue": ("cont", ContinueSpec, {"deflate": lambda s: tuple(p.strip() for p in s.split(",") if p.strip())}),
    "diagnose": ("diagnose", DiagnoseSpec, {}),
    "axisym": ("axisym", AxisymSpec, {}),
    "run": ("run", RunSpec, {"steps": lambda s: tuple(p.strip() for p in s.split(",") if p.strip())}),
}


def _line_of(text, section, key=None):
    cur = None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            cur = s[1:-1].strip().lower()
            if key is None and cur == section:
                return i
        elif cur == section and key is not None and s.split("=")[0].strip().lower() == key:
            return i
    return 0


def parse_config(text: str, base_dir=".") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"),
                                   comment_prefixes=("#",))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from None
    cfg = ExperimentConfig(text=text, base_dir=base_dir)
    for sec in cp.sections():
        name = sec.lower()
        if name == "weight":
            for key, val in cp[sec].items():
                if key != "expr":
                    raise ConfigError(f"line {_line_of(text, name, key)}: [weight] unknown key {key!r}")
                cfg.weight = val.strip()
            continue
        if name == "assert":
            cfg.checks = {k: v.strip() for k, v in cp[sec].items()}
            continue
        if name not in _SECTIONS:
            raise ConfigError(f"line {_line_of(text, name)}: unknown section [{sec}]")
        attr, cls, custom = _SECTIONS[name]
        spec = getattr(cfg, attr)
        types = {f.name: f.type for f in fields(cls)}
        for key, val in cp[sec].items():
            fname = "lam" if (name == "solve" and key == "lambda") else key
            if fname not in types:
                raise ConfigError(f"line {_line_of(text, name, key)}: [{name}] unknown key {key!r}")
            try:
                parser = custom.get(key) or _PARSERS.get(type(getattr(spec, fname)), str)
                setattr(spec, fname, parser(val))
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"line {_line_of(text, name, key)}: [{name}] {key} = {val!r}: {exc}") from None
    from .checks import parse_checks
    try:
        parse_checks(cfg.checks)
    except ValueError as exc:
        raise ConfigError(f"[assert]: {exc}") from None
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    """Read an INI config, or the config embedded in a run manifest (JSON)."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    base = os.path.dirname(os.path.abspath(path))
    if path.endswith(".json"):
        import json
        doc = json.loads(text)
        if "config" not in doc:
            raise ConfigError(f"{path}: manifest has no embedded config")
        return parse_config(doc["config"], doc.get("base_dir", base)).with_overrides(**doc.get("overrides", {}))
    return parse_config(text, base)


def schedule_array(cfg: ExperimentConfig):
    return np.asarray(cfg.cont.schedule())


__all__ = ["ExperimentConfig", "ConfigError", "parse_config", "load_config", "STEPS", "DomainSpec", "MeshSpec",
           "ContinueSpec", "AxisymSpec", "RunSpec"]
