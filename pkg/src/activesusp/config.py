"""Run configuration: strict JSON with unknown-key rejection.

A configuration has the blocks ``ensemble``, ``force`` (or ``null`` for a
passive run), ``numerics``, ``physics``, ``dilute`` and ``output``.  Every
block is optional and falls back to the defaults below; any key that is
not a field of its block is an error naming the full path.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .forcing import SwimForceModel
from .solvers import SolverConfig


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class EnsembleBlock:
    d: int = 2
    L: float = 32.0
    lambda1: float = 0.01
    ell: float = 1.0
    seed: int = 0
    realizations: int = 4
    margin: float = 4.0


@dataclass
class ForceBlock:
    fbar: float = 1.0
    offset: float = 1.7
    gamma: int = -1
    width: float = 0.3
    orientation: str = "frenkel-shear"
    response: str = "constant"
    response_scale: float = 1.0
    seed: int = 0


@dataclass
class NumericsBlock:
    N: int = 256
    tol: float = 1e-10
    maxiter: int = 200
    stall_window: int = 50
    fixed_point_tol: float = 1e-8
    fixed_point_maxiter: int = 50
    damping: float = 1.0
    micro_cells_per_radius: int = 8


@dataclass
class PhysicsBlock:
    kappa: float = 0.0
    delta: float = 0.25
    eps: float = 0.125
    eps_list: list = field(default_factory=lambda: [0.25, 0.125, 0.0625])
    delta_list: list = field(default_factory=list)
    eta: float = 0.5
    threshold: float = 1.0
    L0: float = 4.0
    shear: float = 1.0
    queries: list = field(default_factory=list)
    h: list = field(default_factory=lambda: [{"k": [0, 1], "a": [1.0, 0.0]}])


@dataclass
class DiluteBlock:
    r: float | None = None
    s: float = 1.0
    fmag: float | None = None
    gamma: int | None = None
    lambda1: float = 0.01
    ell: float | None = None
    einstein_lambda1: list = field(default_factory=list)
    einstein_values: list = field(default_factory=list)


@dataclass
class OutputBlock:
    dir: str = "out"


BLOCKS = {"ensemble": EnsembleBlock, "force": ForceBlock, "numerics": NumericsBlock,
          "physics": PhysicsBlock, "dilute": DiluteBlock, "output": OutputBlock}

_TYPES = {int: (int,), float: (int, float), str: (str,), list: (list,),
          "float | None": (int, float, type(None)), "int | None": (int, type(None))}


def _check_type(path, value, annotation):
    allowed = _TYPES.get(annotation)
    if allowed is None:
        return value
    if isinstance(value, bool) or not isinstance(value, allowed):
        raise ConfigError(f"{path}: expected {annotation if isinstance(annotation, str) else annotation.__name__}, "
                          f"got {type(value).__name__}")
    return float(value) if annotation is float else value


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object")
    known = {f.name: f for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{path}.{key}: unknown key (allowed: {', '.join(sorted(known))})")
    kw = {}
    for key, value in data.items():
        ann = known[key].type
        ann = {"int": int, "float": float, "str": str, "list": list}.get(ann, ann)
        kw[key] = _check_type(f"{path}.{key}", value, ann)
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


@dataclass
class RunConfig:
    """Fully validated run configuration."""

    ensemble: EnsembleBlock = field(default_factory=EnsembleBlock)
    force: ForceBlock | None = field(default_factory=ForceBlock)
    numerics: NumericsBlock = field(default_factory=NumericsBlock)
    physics: PhysicsBlock = field(default_factory=PhysicsBlock)
    dilute: DiluteBlock = field(default_factory=DiluteBlock)
    output: OutputBlock = field(default_factory=OutputBlock)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config: expected a JSON object")
        for key in data:
            if key not in BLOCKS:
                raise ConfigError(f"{key}: unknown block (allowed: {', '.join(sorted(BLOCKS))})")
        kw = {}
        for name, blk in BLOCKS.items():
            if name not in data:
                continue
            if name == "force" and data[name] is None:
                kw[name] = None
            else:
                kw[name] = _build(blk, data[name], name)
        cfg = cls(**kw)
        if "h" not in (data.get("physics") or {}) and cfg.ensemble.d == 3:
            cfg.physics.h = [{"k": [0, 1, 0], "a": [1.0, 0.0, 0.0]}]
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON ({exc})") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_json(Path(path).read_text())

    def validate(self):
        e = self.ensemble
        if e.d not in (2, 3):
            raise ConfigError("ensemble.d: must be 2 or 3")
        if e.L <= e.margin:
            raise ConfigError("ensemble.L: must exceed ensemble.margin")
        if e.lambda1 < 0 or e.ell < 0:
            raise ConfigError("ensemble.lambda1, ensemble.ell: must be nonnegative")
        if e.realizations < 1:
            raise ConfigError("ensemble.realizations: must be at least 1")
        n = self.numerics
        if n.N < 8 or n.N % 2:
            raise ConfigError("numerics.N: must be an even integer >= 8")
        if n.tol <= 0 or n.fixed_point_tol <= 0:
            raise ConfigError("numerics.tol: tolerances must be positive")
        if self.force is not None:
            try:
                self.model()
            except ValueError as exc:
                raise ConfigError(f"force: {exc}") from None
        p = self.physics
        for q, E in enumerate(p.queries):
            if (not isinstance(E, list) or len(E) != e.d
                    or any(not isinstance(row, list) or len(row) != e.d for row in E)):
                raise ConfigError(f"physics.queries[{q}]: must be a {e.d}x{e.d} matrix")
        try:
            self.solver_config()
        except ValueError as exc:
            raise ConfigError(f"physics: {exc}") from None
        for i, mode in enumerate(p.h):
            if not isinstance(mode, dict) or len(mode.get("k", ())) != e.d or len(mode.get("a", ())) != e.d:
                raise ConfigError(f"physics.h[{i}]: needs 'k' and 'a' of length {e.d}")
        if list(p.eps_list) != sorted(p.eps_list, reverse=True) or len(set(p.eps_list)) != len(p.eps_list):
            raise ConfigError("physics.eps_list: must be strictly decreasing")
        if len(self.dilute.einstein_lambda1) != len(self.dilute.einstein_values):
            raise ConfigError("dilute.einstein_values: one value per entry of dilute.einstein_lambda1")

    # ----------------------------------------------------------- views
    def model(self) -> SwimForceModel | None:
        if self.force is None:
            return None
        return SwimForceModel(**asdict(self.force))

    def solver_config(self, **overrides) -> SolverConfig:
        p, n = self.physics, self.numerics
        kw = dict(kappa=p.kappa, delta=p.delta, eps=p.eps, N=n.N, tol=n.fixed_point_tol, inner_tol=n.tol,
                  maxiter=n.fixed_point_maxiter, seed=self.ensemble.seed, h=p.h, eta=p.eta,
                  ell=self.ensemble.ell, threshold=p.threshold, damping=n.damping)
        kw.update(overrides)
        return SolverConfig(**kw)

    def to_dict(self) -> dict:
        out = {name: (None if getattr(self, name) is None else asdict(getattr(self, name))) for name in BLOCKS}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()
