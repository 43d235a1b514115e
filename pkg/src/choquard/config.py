"""Run configuration: INI-style sections of key = value pairs.

Sections and keys (defaults in parentheses):

    [problem]  N (3), alpha (1.0), p (2.0), bc (neumann), domain (annulus),
               a (1.0), b (2.0), truncation_R (16 a, exterior only),
               V (const 1.0)
    [grid]     n (256), grading (uniform; geometric for exterior),
               ratio (1.04)
    [solver]   max_iters (50000), tol_grad (1e-9), tol_constraint (1e-12),
               step_rule (armijo), tau (1.0), armijo_c (1e-4),
               armijo_shrink (0.5), seed (0), enforce_nonneg (true),
               preconditioner (energy)
    [sweep]    alphas (0.4, 0.2, 0.1, 0.05), warm_start (true)
    [output]   dir (CHOQUARD_OUT_DIR or .), figures (true)

Parsing re-validates every invariant with source-located messages and
returns (config, warnings).  `render_config` emits canonical text such that
parse(render(cfg)) reproduces cfg exactly.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace

from .energy import DIRICHLET, NEUMANN, Problem
from .geometry import ANNULUS, EXTERIOR, RadialDomain, RadialGrid, build_grid
from .potentials import PotentialError, parse_potential_spec
from .solver import SolveOptions


class ConfigError(ValueError):
    def __init__(self, messages):
        self.messages = list(messages)
        super().__init__("\n".join(self.messages))


@dataclass
class RunConfig:
    # [problem]
    N: int = 3
    alpha: float = 1.0
    p: float = 2.0
    bc: str = NEUMANN
    domain: str = ANNULUS
    a: float = 1.0
    b: float = 2.0
    truncation_R: float = 16.0
    V: str = "const 1.0"
    # [grid]
    n: int = 256
    grading: str = "uniform"
    ratio: float = 1.04
    # [solver]
    max_iters: int = 50000
    tol_grad: float = 1e-9
    tol_constraint: float = 1e-12
    step_rule: str = "armijo"
    tau: float = 1.0
    armijo_c: float = 1e-4
    armijo_shrink: float = 0.5
    seed: int = 0
    enforce_nonneg: bool = True
    preconditioner: str = "energy"
    # [sweep]
    alphas: tuple = (0.4, 0.2, 0.1, 0.05)
    warm_start: bool = True
    # [output]
    dir: str = ""
    figures: bool = True

    # --- builders -----------------------------------------------------

    def make_domain(self) -> RadialDomain:
        if self.domain == ANNULUS:
            return RadialDomain(ANNULUS, self.a, b=self.b, dimension=self.N)
        return RadialDomain(EXTERIOR, self.a, truncation_R=self.truncation_R,
                            dimension=self.N)

    def make_grid(self) -> RadialGrid:
        return build_grid(self.make_domain(), self.n, self.grading, self.ratio)

    def make_problem(self) -> Problem:
        dom = self.make_domain()
        potential = parse_potential_spec(self.V, (dom.a, dom.outer))
        return Problem(dom, self.bc, potential, self.p, self.alpha)

    def make_solve_options(self) -> SolveOptions:
        return SolveOptions(
            max_iters=self.max_iters, tol_grad=self.tol_grad,
            tol_constraint=self.tol_constraint, step_rule=self.step_rule,
            tau=self.tau, armijo_c=self.armijo_c,
            armijo_shrink=self.armijo_shrink, seed=self.seed,
            enforce_nonneg=self.enforce_nonneg,
            preconditioner=self.preconditioner,
        )


_SCHEMA = {
    "problem": {
        "N": int, "alpha": float, "p": float, "bc": str, "domain": str,
        "a": float, "b": float, "truncation_R": float, "V": str,
    },
    "grid": {"n": int, "grading": str, "ratio": float},
    "solver": {
        "max_iters": int, "tol_grad": float, "tol_constraint": float,
        "step_rule": str, "tau": float, "armijo_c": float,
        "armijo_shrink": float, "seed": int, "enforce_nonneg": bool,
        "preconditioner": str,
    },
    "sweep": {"alphas": "floats", "warm_start": bool},
    "output": {"dir": str, "figures": bool},
}

_KEY_TO_FIELD = {(s, k): k for s, keys in _SCHEMA.items() for k in keys}


def _parse_scalar(raw: str, kind, where: str, errors: list):
    raw = raw.strip()
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is bool:
            low = raw.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError(f"expected a boolean, got {raw!r}")
        if kind == "floats":
            return tuple(float(part) for part in raw.split(",") if part.strip())
        return raw
    except ValueError as exc:
        errors.append(f"{where}: {exc}")
        return None


def parse_pairs(text: str):
    """Raw (section, key) -> (value-string, line-number) map with syntax errors."""
    pairs = {}
    errors = []
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith(("#", ";")):
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            if section not in _SCHEMA:
                errors.append(f"line {lineno}: unknown section [{section}]")
                section = None
            continue
        if "=" not in stripped:
            errors.append(f"line {lineno}: expected key = value, got {stripped!r}")
            continue
        if section is None:
            errors.append(f"line {lineno}: key outside any known section")
            continue
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key not in _SCHEMA[section]:
            errors.append(f"line {lineno}: unknown key [{section}] {key}")
            continue
        pairs[(section, key)] = (value.strip(), lineno)
    return pairs, errors


def build_config(pairs: dict, errors: list):
    cfg = RunConfig()
    explicit = set()
    for (section, key), (raw, lineno) in pairs.items():
        where = f"line {lineno}: [{section}] {key}"
        value = _parse_scalar(raw, _SCHEMA[section][key], where, errors)
        if value is not None:
            setattr(cfg, _KEY_TO_FIELD[(section, key)], value)
            explicit.add((section, key))
    # domain-dependent defaults
    if cfg.domain == EXTERIOR:
        if ("problem", "truncation_R") not in explicit:
            cfg.truncation_R = 16.0 * cfg.a
        if ("grid", "grading") not in explicit:
            cfg.grading = "geometric"
    return cfg


def validate_config(cfg: RunConfig, pairs: dict | None = None):
    """Invariant checks; returns (errors, warnings) with source locations."""

    def where(section, key):
        if pairs and (section, key) in pairs:
            return f"line {pairs[(section, key)][1]}: [{section}] {key}"
        return f"[{section}] {key}"

    errors, warns = [], []
    if cfg.domain not in (ANNULUS, EXTERIOR):
        errors.append(f"{where('problem', 'domain')}: must be annulus or exterior")
        return errors, warns
    if cfg.bc not in (NEUMANN, DIRICHLET):
        errors.append(f"{where('problem', 'bc')}: must be neumann or dirichlet")
    if cfg.N < 2:
        errors.append(f"{where('problem', 'N')}: dimension must be >= 2")
    if not cfg.a > 0:
        errors.append(f"{where('problem', 'a')}: inner radius must be positive")
    if cfg.domain == ANNULUS and not cfg.b > cfg.a:
        errors.append(f"{where('problem', 'b')}: annulus needs b > a")
    if cfg.domain == EXTERIOR and not cfg.truncation_R > cfg.a:
        errors.append(f"{where('problem', 'truncation_R')}: needs R > a")
    if errors:
        return errors, warns

    if not 0.0 < cfg.alpha < cfg.N:
        errors.append(
            f"{where('problem', 'alpha')}: alpha must lie in (0, N) = (0, {cfg.N}), "
            f"got {cfg.alpha}"
        )
    if cfg.p < 1.0:
        errors.append(f"{where('problem', 'p')}: nonlinearity exponent must be >= 1")
    if cfg.n < 16:
        errors.append(f"{where('grid', 'n')}: need at least 16 cells")
    if cfg.grading not in ("uniform", "geometric"):
        errors.append(f"{where('grid', 'grading')}: must be uniform or geometric")
    if cfg.ratio <= 0:
        errors.append(f"{where('grid', 'ratio')}: grading ratio must be positive")
    if cfg.tol_grad <= 0 or cfg.tol_constraint <= 0:
        errors.append(f"{where('solver', 'tol_grad')}: tolerances must be positive")
    if cfg.step_rule not in ("armijo", "fixed"):
        errors.append(f"{where('solver', 'step_rule')}: must be armijo or fixed")
    if not (0.0 < cfg.armijo_c < 1.0 and 0.0 < cfg.armijo_shrink < 1.0):
        errors.append(f"{where('solver', 'armijo_c')}: armijo parameters must lie in (0, 1)")
    if cfg.tau <= 0:
        errors.append(f"{where('solver', 'tau')}: step size must be positive")
    if cfg.preconditioner not in ("energy", "none"):
        errors.append(f"{where('solver', 'preconditioner')}: must be energy or none")
    if cfg.alphas and any(a2 >= a1 for a1, a2 in zip(cfg.alphas, cfg.alphas[1:])):
        errors.append(f"{where('sweep', 'alphas')}: must be strictly decreasing")
    if cfg.alphas and not all(0.0 < al < cfg.N for al in cfg.alphas):
        errors.append(f"{where('sweep', 'alphas')}: every alpha must lie in (0, N)")
    if errors:
        return errors, warns

    outer = cfg.b if cfg.domain == ANNULUS else cfg.truncation_R
    try:
        potential = parse_potential_spec(cfg.V, (cfg.a, outer))
    except PotentialError as exc:
        errors.append(f"{where('problem', 'V')}: {exc}")
        return errors, warns

    floor = potential.declared_floor
    relaxed = cfg.bc == DIRICHLET and cfg.domain == ANNULUS and cfg.N >= 3
    if floor <= 0 and not relaxed:
        errors.append(
            f"{where('problem', 'V')}: inf V = {floor:.6g} violates the existence "
            "hypothesis inf V > 0 (only the Dirichlet annulus with N >= 3 "
            "admits V >= 0)"
        )
    elif relaxed and floor < 0:
        errors.append(
            f"{where('problem', 'V')}: inf V = {floor:.6g} is negative; the "
            "Dirichlet annulus with N >= 3 still needs V >= 0"
        )
    if cfg.domain == EXTERIOR and cfg.p <= (cfg.N + cfg.alpha) / cfg.N:
        warns.append(
            f"{where('problem', 'p')}: outside theorem range "
            f"p > (N+alpha)/N = {(cfg.N + cfg.alpha) / cfg.N:.6g} for exterior "
            "domains; existence not guaranteed"
        )
    return errors, warns


def parse_config(text: str):
    """Parse and validate; returns (RunConfig, warnings) or raises ConfigError."""
    pairs, errors = parse_pairs(text)
    cfg = build_config(pairs, errors)
    if errors:
        raise ConfigError(errors)
    verrors, warns = validate_config(cfg, pairs)
    if verrors:
        raise ConfigError(verrors)
    return cfg, warns


def apply_overrides(cfg: RunConfig, assignments) -> RunConfig:
    """Apply command-line ``section.key=value`` overrides and re-validate."""
    errors = []
    updates = {}
    for item in assignments:
        if "=" not in item:
            errors.append(f"--set {item!r}: expected section.key=value")
            continue
        target, _, raw = item.partition("=")
        if "." not in target:
            errors.append(f"--set {item!r}: expected section.key=value")
            continue
        section, _, key = target.partition(".")
        if section not in _SCHEMA or key not in _SCHEMA[section]:
            errors.append(f"--set {item!r}: unknown key {section}.{key}")
            continue
        value = _parse_scalar(raw, _SCHEMA[section][key], f"--set {target}", errors)
        if value is not None:
            updates[key] = value
    if errors:
        raise ConfigError(errors)
    new = replace(cfg, **updates)
    verrors, warns = validate_config(new)
    if verrors:
        raise ConfigError(verrors)
    return new, warns


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_config(cfg: RunConfig) -> str:
    """Canonical text form; parse_config(render_config(cfg)) == cfg."""
    lines = []
    for section, keys in _SCHEMA.items():
        lines.append(f"[{section}]")
        for key in keys:
            lines.append(f"{key} = {_format_value(getattr(cfg, key))}")
        lines.append("")
    return "\n".join(lines)


def resolve_out_dir(cfg: RunConfig, flag_value: str | None = None) -> str:
    """Output directory precedence: --out flag, config, CHOQUARD_OUT_DIR, cwd."""
    if flag_value:
        return flag_value
    if cfg.dir:
        return cfg.dir
    return os.environ.get("CHOQUARD_OUT_DIR", ".")
