"""Closed-form utility extraction, rendering/parsing, ASC normalisation and term ranking."""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Dataset
from .errors import DomainError, InvalidInputError, ParseError
from .model import ModelParams

INT_TOL = 1e-9


@dataclass
class Term:
    coefficient: float
    exponents: np.ndarray  # one per feature

    def __post_init__(self):
        self.exponents = np.asarray(self.exponents, dtype=float)

    def value(self, x: np.ndarray) -> np.ndarray:
        """Product term prod_i x_i^e_i for a vector or a batch of rows."""
        x = np.asarray(x, dtype=float)
        return np.prod(np.power(x, self.exponents), axis=-1)

    @property
    def is_constant(self) -> bool:
        return bool(np.all(self.exponents == 0))


@dataclass
class UtilityExpression:
    alt_name: str
    constant: float
    terms: list[Term] = field(default_factory=list)
    feature_names: list[str] = field(default_factory=list)

    def render(self, prune_threshold: float = 0.0, digits: int = 3) -> str:
        return render_expression(self, prune_threshold, digits)


@dataclass
class TermInfluence:
    term: str
    coefficient: float
    mean_term_value: float
    influence: float
    sign: str  # "positive" | "negative"


def extract_utilities(params: ModelParams, prune_threshold: float = 0.0) -> list[UtilityExpression]:
    """One expression per alternative, terms read straight off w1 columns and w2 rows.

    Terms with |coefficient| < prune_threshold are dropped; the default keeps
    every term so evaluation reproduces the network exactly.
    """
    exprs = []
    for k, alt in enumerate(params.alt_names):
        terms = [
            Term(float(params.w2[j, k]), params.w1[:, j].copy())
            for j in range(params.m)
            if abs(params.w2[j, k]) >= prune_threshold
        ]
        exprs.append(UtilityExpression(alt, float(params.b2[k]), terms, list(params.feature_names)))
    return exprs


def evaluate_expression(expr: UtilityExpression, x: np.ndarray) -> np.ndarray | float:
    """constant + sum_j coefficient_j * prod_i x_i^exponent_ij, for a vector or batch."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        for t in expr.terms:
            fractional = np.any(np.abs(t.exponents - np.round(t.exponents)) > INT_TOL)
            if fractional or (np.any(x == 0) and np.any(t.exponents < 0)):
                raise DomainError("x must be positive for non-integer or negative exponents")
    total = np.full(x.shape[:-1], expr.constant, dtype=float)
    for t in expr.terms:
        total = total + t.coefficient * t.value(x)
    return float(total) if total.ndim == 0 else total


def merge_terms(expr: UtilityExpression) -> UtilityExpression:
    """Combine terms with identical exponent vectors; all-zero exponents fold into the constant."""
    merged: dict[tuple, float] = {}
    constant = expr.constant
    for t in expr.terms:
        if t.is_constant:
            constant += t.coefficient
            continue
        key = tuple(t.exponents.tolist())
        merged[key] = merged.get(key, 0.0) + t.coefficient
    terms = [Term(c, np.array(k)) for k, c in merged.items()]
    return UtilityExpression(expr.alt_name, constant, terms, list(expr.feature_names))


def normalize_ascs(exprs: Sequence[UtilityExpression], reference_alt: int = 1) -> list[UtilityExpression]:
    """Shift every constant by the (1-based) reference alternative's constant."""
    if not 1 <= reference_alt <= len(exprs):
        raise InvalidInputError(f"reference alternative {reference_alt} out of range 1..{len(exprs)}")
    ref = exprs[reference_alt - 1].constant
    return [
        UtilityExpression(e.alt_name, e.constant - ref, list(e.terms), list(e.feature_names)) for e in exprs
    ]


# --- rendering ------------------------------------------------------------


def _fmt_exp(e: float) -> str:
    r = round(e)
    return str(int(r)) if abs(e - r) <= INT_TOL else f"{e:.3f}"


def _factor(name: str, e: float) -> str:
    s = _fmt_exp(e)
    return name if s == "1" else f"{name}^{s}"


def render_term(exponents: np.ndarray, feature_names: Sequence[str]) -> str:
    """Monomial as text; negative exponents go in a denominator, e.g. ``T_car/C_car``."""
    num = [_factor(n, e) for n, e in zip(feature_names, exponents) if e > 0 and _fmt_exp(e) != "0"]
    den = [_factor(n, -e) for n, e in zip(feature_names, exponents) if e < 0 and _fmt_exp(-e) != "0"]
    top = "*".join(num) if num else "1"
    if not den:
        return top
    bottom = den[0] if len(den) == 1 else "(" + "*".join(den) + ")"
    return f"{top}/{bottom}"


def render_expression(expr: UtilityExpression, prune_threshold: float = 0.0, digits: int = 3) -> str:
    """Render ``V_alt = c1*term1 - c2*term2 + const``.

    Coefficients use ``digits`` decimals (pass ``digits=17`` for a lossless
    rendering suitable for :func:`parse_expression`).
    """
    fmt = f"{{:.{digits}f}}" if digits < 17 else "{!r}"
    parts = []
    for t in expr.terms:
        if abs(t.coefficient) < prune_threshold:
            continue
        body = render_term(t.exponents, expr.feature_names)
        mag = fmt.format(abs(t.coefficient))
        sign = "-" if t.coefficient < 0 else "+"
        if body == "1":
            parts.append((sign, mag))
        elif body.startswith("1/"):
            parts.append((sign, f"{mag}{body[1:]}"))
        else:
            parts.append((sign, f"{mag}*{body}"))
    c = expr.constant
    parts.append(("-" if c < 0 else "+", fmt.format(abs(c))))
    first_sign, first = parts[0]
    text = ("-" if first_sign == "-" else "") + first
    for sign, body in parts[1:]:
        text += f" {sign} {body}"
    return f"V_{expr.alt_name} = {text}"


_NUM = r"(?:\d+(?:\.\d*)?(?:[eE][-+]?\d+)?|inf)"


def _parse_product(s: str, names: Sequence[str], sign: float, exps: np.ndarray) -> None:
    s = s.strip()
    if s.startswith("(") and s.endswith(")"):
        s = s[1:-1]
    for f in s.split("*"):
        f = f.strip()
        if f == "1":
            continue
        name, _, power = f.partition("^")
        if name not in names:
            raise ParseError(f"unknown feature '{name}' in expression")
        exps[list(names).index(name)] += sign * (float(power) if power else 1.0)


def parse_expression(text: str, feature_names: Sequence[str]) -> UtilityExpression:
    """Inverse of :func:`render_expression` for the same feature names."""
    head, sep, body = text.partition("=")
    if not sep or not head.strip().startswith("V_"):
        raise ParseError(f"not a rendered utility: {text!r}")
    alt = head.strip()[2:]
    body = body.strip()
    tokens = re.split(r"\s+([+-])\s+", body)
    signs = ["-" if tokens[0].startswith("-") else "+"] + tokens[1::2]
    chunks = [tokens[0].lstrip("-")] + tokens[2::2]
    constant = 0.0
    terms = []
    for sign, chunk in zip(signs, chunks):
        s = -1.0 if sign == "-" else 1.0
        m = re.fullmatch(rf"({_NUM})(?:([*/])(.+))?", chunk.strip())
        if not m:
            raise ParseError(f"cannot parse term {chunk!r}")
        coef = s * float(m.group(1))
        if m.group(2) is None:
            constant += coef
            continue
        exps = np.zeros(len(feature_names))
        if m.group(2) == "/":
            top, bottom = "1", m.group(3)
        else:
            top, _, bottom = m.group(3).partition("/")
        _parse_product(top, feature_names, 1.0, exps)
        if bottom:
            _parse_product(bottom, feature_names, -1.0, exps)
        terms.append(Term(coef, exps))
    return UtilityExpression(alt, constant, terms, list(feature_names))


# --- influence ranking ----------------------------------------------------


def rank_influential_terms(
    exprs: Sequence[UtilityExpression], dataset: Dataset
) -> dict[str, dict[str, TermInfluence | None]]:
    """Per alternative, the term with the largest positive and largest negative mean contribution.

    A term's contribution is coefficient * mean(term value over the dataset);
    its influence is the magnitude of that product. Identical monomials are
    merged first. Returns ``{alt: {"positive": ..., "negative": ...}}`` where
    an empty slot is None (e.g. a constant-only utility).
    """
    out = {}
    for expr in exprs:
        merged = merge_terms(expr)
        best: dict[str, TermInfluence | None] = {"positive": None, "negative": None}
        for info in term_influences(merged, dataset):
            cur = best[info.sign]
            if cur is None or info.influence > cur.influence:
                best[info.sign] = info
        out[expr.alt_name] = best
    return out


def term_influences(expr: UtilityExpression, dataset: Dataset) -> list[TermInfluence]:
    infos = []
    for t in expr.terms:
        mean_val = float(np.mean(t.value(dataset.features)))
        contrib = t.coefficient * mean_val
        if contrib == 0:
            continue
        infos.append(
            TermInfluence(
                render_term(t.exponents, expr.feature_names),
                t.coefficient,
                mean_val,
                abs(contrib),
                "positive" if contrib > 0 else "negative",
            )
        )
    return infos


def standardize_surface(values: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-variance rescaling of a utility surface over its evaluation grid."""
    values = np.asarray(values, dtype=float)
    sd = values.std()
    return (values - values.mean()) / (sd if sd > 0 else 1.0)


# --- reports --------------------------------------------------------------


def utilities_to_json(exprs: Sequence[UtilityExpression]) -> list[dict]:
    return [
        {
            "alt": e.alt_name,
            "constant": e.constant,
            "terms": [
                {
                    "coefficient": t.coefficient,
                    "exponents": dict(zip(e.feature_names, t.exponents.tolist())),
                    "rendered": render_term(t.exponents, e.feature_names),
                }
                for t in e.terms
            ],
            "rendered": render_expression(e),
        }
        for e in exprs
    ]


def utilities_to_text(exprs: Sequence[UtilityExpression], prune_threshold: float = 0.0) -> str:
    return "\n".join(render_expression(merge_terms(e), prune_threshold) for e in exprs) + "\n"


def write_influence_csv(path: str | Path, ranking: dict[str, dict[str, TermInfluence | None]]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["alt", "term", "coefficient", "mean_value", "influence", "sign"])
        for alt, slots in ranking.items():
            for info in slots.values():
                if info is not None:
                    w.writerow([alt, info.term, info.coefficient, info.mean_term_value, info.influence, info.sign])
