"""Experiment configuration: a flat ``key = value`` format with ``[section]``
headers, hash comments, quoted expression strings, and comma-separated lists.

The parsed configuration round-trips: ``parse_config(emit_config(cfg))``
reproduces ``cfg`` exactly.  Builders turn a configuration into the domain,
coefficient, source, reaction, and space objects of the library.
"""

from __future__ import annotations

import importlib.resources
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .coefficients import CoefficientField, ReactionSpec, SourceField, as_field
from .expressions import ExpressionError, parse_expression
from .spaces import GalerkinSpace, TensorDomain, build_space

__all__ = [
    "ConfigError",
    "ProblemConfig",
    "DiscretizationConfig",
    "StudyConfig",
    "OutputConfig",
    "ExperimentConfig",
    "parse_config",
    "emit_config",
    "load_config",
    "shipped_config_dir",
    "build_problem_objects",
    "make_space",
]

STUDY_KINDS = ("solve", "rate", "cea", "ap", "dq", "resolvent", "semigroup",
               "parabolic", "constants")


class ConfigError(ValueError):
    """Malformed configuration text; carries 1-based line and column."""

    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


@dataclass
class ProblemConfig:
    domain: tuple = (0.0, math.pi, 0.0, math.pi)
    a11: str = "1"
    a12: str = "0"
    a21: str = "0"
    a22: str = "1"
    a12_dx1: Optional[str] = None
    a12_dx2: Optional[str] = None
    a21_dx1: Optional[str] = None
    a21_dx2: Optional[str] = None
    lam: float = 1.0
    a22_x2_only: bool = True
    offdiag_derivs_bounded: bool = True
    offdiag_mixed_deriv_in_l2: bool = False
    beta: str = "zero"  # zero | linear | arctan
    mu: float = 1.0
    f: str = "0"
    f_dx1: Optional[str] = None
    f_grad_x1_in_l2: bool = False
    f_slices_vanish_x1: bool = False


@dataclass
class DiscretizationConfig:
    basis1: str = "sine"
    m1: int = 8
    basis2: str = "sine"
    m2: int = 8
    quad_order: int = 4


@dataclass
class StudyConfig:
    kind: str = "solve"
    epsilon: float = 0.5
    epsilons: tuple = (0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625)
    check_bound: bool = True
    sizes: tuple = (2, 4, 8, 16)
    mu: float = 1.0
    T: float = 1.0
    stepper: str = "be"
    steps: int = 256
    yosida_mu: float = 1.0
    damping: float = 0.5
    mus: tuple = (1.0, 10.0, 100.0)
    source: Optional[str] = None        # time-dependent source expression
    u0: Optional[str] = None            # parabolic initial state expression
    u0_eps_coeff: float = 0.0           # u0(eps) = (1 + coeff * eps) u0
    tol: float = 1e-2
    export: Optional[str] = None        # lattice export file name for solve


@dataclass
class OutputConfig:
    directory: str = "out"
    formats: tuple = ("csv", "json")


@dataclass
class ExperimentConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    discretization: DiscretizationConfig = field(default_factory=DiscretizationConfig)
    study: StudyConfig = field(default_factory=StudyConfig)
    output: OutputConfig = field(default_factory=OutputConfig)


# key -> value codec table; "expr" values are stored as the quoted string
_SCHEMA = {
    "problem": {
        "domain": "float_list4",
        "a11": "expr", "a12": "expr", "a21": "expr", "a22": "expr",
        "a12_dx1": "expr", "a12_dx2": "expr",
        "a21_dx1": "expr", "a21_dx2": "expr",
        "lambda": ("lam", "float"),
        "a22_x2_only": "bool",
        "offdiag_derivs_bounded": "bool",
        "offdiag_mixed_deriv_in_l2": "bool",
        "beta": "word", "mu": "float",
        "f": "expr", "f_dx1": "expr",
        "f_grad_x1_in_l2": "bool", "f_slices_vanish_x1": "bool",
    },
    "discretization": {
        "basis1": "word", "m1": "int", "basis2": "word", "m2": "int",
        "quad_order": "int",
    },
    "study": {
        "kind": "word", "epsilon": "float", "epsilons": "float_list",
        "check_bound": "bool", "sizes": "int_list", "mu": "float",
        "T": "float", "stepper": "word", "steps": "int",
        "yosida_mu": "float", "damping": "float", "mus": "float_list",
        "source": "expr", "u0": "expr", "u0_eps_coeff": "float",
        "tol": "float", "export": "word",
    },
    "output": {
        "directory": "word", "formats": "word_list",
    },
}

_SECTIONS = {"problem": ProblemConfig, "discretization": DiscretizationConfig,
             "study": StudyConfig, "output": OutputConfig}


def _parse_scalar(kind, text, line, col):
    text = text.strip()
    try:
        if kind == "float":
            if text == "pi":
                return math.pi
            return float(text)
        if kind == "int":
            return int(text)
        if kind == "bool":
            if text in ("true", "false"):
                return text == "true"
            raise ValueError(f"expected true or false, got {text!r}")
        if kind == "word":
            return text
    except ValueError as exc:
        raise ConfigError(str(exc), line, col)
    raise AssertionError(kind)


def _parse_value(kind, text, line, col):
    text = text.strip()
    if kind == "expr":
        if not (len(text) >= 2 and text[0] == '"' and text[-1] == '"'):
            raise ConfigError("expression values must be double-quoted", line, col)
        inner = text[1:-1]
        try:
            parse_expression(inner)
        except ExpressionError as exc:
            raise ConfigError(f"bad expression {inner!r}: {exc}",
                              line, col + exc.column)
        return inner
    if kind in ("float", "int", "bool", "word"):
        return _parse_scalar(kind, text, line, col)
    if kind == "float_list4":
        vals = tuple(_parse_scalar("float", p, line, col) for p in text.split(","))
        if len(vals) != 4:
            raise ConfigError("domain needs exactly four numbers a1,b1,a2,b2",
                              line, col)
        return vals
    if kind == "float_list":
        return tuple(_parse_scalar("float", p, line, col) for p in text.split(","))
    if kind == "int_list":
        return tuple(_parse_scalar("int", p, line, col) for p in text.split(","))
    if kind == "word_list":
        return tuple(p.strip() for p in text.split(","))
    raise AssertionError(kind)


def _strip_comment(raw: str) -> str:
    out = []
    in_quote = False
    for ch in raw:
        if ch == '"':
            in_quote = not in_quote
        if ch == "#" and not in_quote:
            break
        out.append(ch)
    return "".join(out)


def parse_config(text: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).rstrip()
        if not line.strip():
            continue
        stripped = line.strip()
        indent = len(line) - len(line.lstrip()) + 1
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigError("unterminated section header", lineno,
                                  indent + len(stripped))
            name = stripped[1:-1].strip()
            if name not in _SECTIONS:
                raise ConfigError(f"unknown section [{name}]", lineno, indent)
            section = name
            continue
        if section is None:
            raise ConfigError("key outside of any [section]", lineno, indent)
        if "=" not in stripped:
            raise ConfigError("expected key = value", lineno, indent)
        key, _, value = stripped.partition("=")
        key = key.strip()
        schema = _SCHEMA[section]
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno, indent)
        spec = schema[key]
        attr, kind = spec if isinstance(spec, tuple) else (key, spec)
        col = line.index("=") + 2
        setattr(getattr(cfg, section), attr, _parse_value(kind, value, lineno, col))
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig):
    st = cfg.study
    if st.kind not in STUDY_KINDS:
        raise ConfigError(f"unknown study kind {st.kind!r}; expected one of "
                          + ", ".join(STUDY_KINDS), 1)
    for eps in (st.epsilon,) + tuple(st.epsilons):
        if not (0.0 < eps <= 1.0):
            raise ConfigError(f"epsilon must lie in (0,1], got {eps!r}", 1)
    if cfg.problem.beta not in ("zero", "linear", "arctan"):
        raise ConfigError(f"unknown reaction {cfg.problem.beta!r}", 1)
    if cfg.discretization.basis1 not in ("sine", "q1") or \
       cfg.discretization.basis2 not in ("sine", "q1"):
        raise ConfigError("basis kinds must be 'sine' or 'q1'", 1)
    if cfg.problem.lam <= 0:
        raise ConfigError("lambda must be positive", 1)


def _emit_value(kind, value) -> str:
    if kind == "expr":
        return f'"{value}"'
    if kind == "bool":
        return "true" if value else "false"
    if kind in ("float",):
        return repr(float(value))
    if kind == "int":
        return str(int(value))
    if kind == "word":
        return str(value)
    if kind in ("float_list", "float_list4"):
        return ", ".join(repr(float(v)) for v in value)
    if kind == "int_list":
        return ", ".join(str(int(v)) for v in value)
    if kind == "word_list":
        return ", ".join(str(v) for v in value)
    raise AssertionError(kind)


def emit_config(cfg: ExperimentConfig) -> str:
    lines = []
    for section, schema in _SCHEMA.items():
        lines.append(f"[{section}]")
        holder = getattr(cfg, section)
        for key, spec in schema.items():
            attr, kind = spec if isinstance(spec, tuple) else (key, spec)
            value = getattr(holder, attr)
            if value is None:
                continue
            lines.append(f"{key} = {_emit_value(kind, value)}")
        lines.append("")
    return "\n".join(lines)


def load_config(path) -> ExperimentConfig:
    with open(path, "r") as fh:
        return parse_config(fh.read())


def shipped_config_dir() -> Path:
    """Directory holding the experiment configs installed with the package."""
    return Path(str(importlib.resources.files("anisolab").joinpath("configs")))


def _field_from_key(expr_text: Optional[str], dx1=None, dx2=None, label=""):
    if expr_text is None:
        return None
    return as_field(parse_expression(expr_text),
                    dx1=parse_expression(dx1) if dx1 is not None else None,
                    dx2=parse_expression(dx2) if dx2 is not None else None,
                    label=label or expr_text)


def build_problem_objects(cfg: ExperimentConfig):
    """Domain, coefficients, source, and reaction from a configuration."""
    p = cfg.problem
    a1, b1, a2, b2 = p.domain
    domain = TensorDomain((a1, b1), (a2, b2))
    A = CoefficientField(
        a11=_field_from_key(p.a11, label="a11"),
        a12=_field_from_key(p.a12, p.a12_dx1, p.a12_dx2, label="a12"),
        a21=_field_from_key(p.a21, p.a21_dx1, p.a21_dx2, label="a21"),
        a22=_field_from_key(p.a22, label="a22"),
        lam=p.lam,
        a22_depends_only_on_x2=p.a22_x2_only,
        offdiag_derivs_bounded=p.offdiag_derivs_bounded,
        offdiag_mixed_deriv_in_l2=p.offdiag_mixed_deriv_in_l2,
    )
    A.validate(domain)
    source = SourceField(
        f=_field_from_key(p.f, label="f"),
        dx1=_field_from_key(p.f_dx1, label="f_dx1"),
        grad_x1_in_l2=p.f_grad_x1_in_l2,
        slices_vanish_x1=p.f_slices_vanish_x1,
    )
    if p.beta == "zero":
        reaction = ReactionSpec.zero()
    elif p.beta == "linear":
        reaction = ReactionSpec.linear(p.mu)
    else:
        reaction = ReactionSpec.arctan()
    reaction.validate()
    return domain, A, source, reaction


def make_space(cfg: ExperimentConfig, domain: TensorDomain,
               m1: Optional[int] = None, m2: Optional[int] = None) -> GalerkinSpace:
    d = cfg.discretization
    return build_space(domain, d.basis1, m1 or d.m1, d.basis2, m2 or d.m2,
                       d.quad_order)
