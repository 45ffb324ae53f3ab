"""Exact-arithmetic parameter ledger.

Every scale is a power of lambda_q = a^(b^q), so each inequality between two
products of scales reduces to an inequality between exponents.  All of that
bookkeeping is done here in ``fractions.Fraction``; nothing touches a float.

The large base ``a`` is never expanded.  Constants that the argument absorbs by
taking ``a`` large are reported as the strict exponent slack that pays for them.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Callable

F = Fraction

PARAM_KEYS = ("a", "b", "beta", "Gamma", "gamma", "N_dec", "d", "C_R")

INEQUALITY_IDS = ("1", "2", "3", "4", "5", "6", "7", "7'", "8", "9", "10", "11")


@dataclass(frozen=True)
class ParameterSet:
    """Symbols of the scheme as exact rationals."""

    b: int
    beta: Fraction
    Gamma: Fraction
    gamma: Fraction
    N_dec: int
    d: int
    C_R: Fraction = F(1, 100)
    a: int = 2

    def __post_init__(self):
        if self.b < 2:
            raise ValueError("b must be at least 2")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        for name in ("Gamma", "gamma"):
            v = getattr(self, name)
            if not (0 < v < 1):
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.N_dec < 1 or self.d < 1:
            raise ValueError("N_dec and d must be positive integers")
        if self.a < 2:
            raise ValueError("a must be at least 2")

    def with_beta(self, beta) -> "ParameterSet":
        return replace(self, beta=F(beta))


@dataclass(frozen=True)
class InequalityResult:
    id: str
    lhs: Fraction
    rhs: Fraction
    beta_slope: Fraction  # slack decreases by beta_slope per unit of beta

    @property
    def slack(self) -> Fraction:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return self.lhs < self.rhs

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"({self.id}) lhs={self.lhs} rhs={self.rhs} slack={self.slack} {verdict}"


@dataclass
class LedgerReport:
    params: ParameterSet
    dim: int
    rows: list = field(default_factory=list)
    baseline: list = field(default_factory=list)  # same rows at beta' = 1
    gamma_conditions: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def failures(self) -> list:
        return [r.id for r in self.rows if not r.passed]

    def row(self, ident: str) -> InequalityResult:
        for r in self.rows:
            if r.id == ident:
                return r
        raise KeyError(ident)

    def lines(self) -> list:
        return [r.line() for r in self.rows]

    def text(self) -> str:
        p = self.params
        head = [
            f"# b={p.b} beta={p.beta} Gamma={p.Gamma} gamma={p.gamma} "
            f"N_dec={p.N_dec} d={p.d} C_R={p.C_R} dim={self.dim}",
        ]
        body = self.lines()
        tail = [f"# gamma ({k}): {'PASS' if ok else 'FAIL'} slack={s}"
                for k, ok, s in self.gamma_conditions]
        tail += [f"# {n}" for n in self.notes]
        verdict = "ALL PASS" if self.passed else "FAILED: " + ",".join(self.failures())
        return "\n".join(head + body + tail + [f"# {verdict}"]) + "\n"


def _rows(p: ParameterSet, beta: Fraction, dim: int) -> list:
    b = F(p.b)
    G, g, N, d = p.Gamma, p.gamma, F(p.N_dec), F(p.d)
    # 2-D pipes only gain r^(1/2) from L^2 to L^1 in the Nash/transport bound.
    r_nash = G * (1 - b) / (2 if dim == 2 else 1)
    b2 = b * b
    out = [
        ("1", F(-6), (2 - 2 * beta) * b2, 2 * b2),
        ("2", F(-8), (2 - 2 * beta) * b, 2 * b),
        ("3", F(96), b, F(0)),
        ("4", 64 * (N + 4), b * N * (1 - G - G / b), F(0)),
        ("5", G * (b - 1), b, F(0)),
        ("6", -2 * beta * b + (1 + g) * b + 8, -2 * beta * b2 + (2 - g) * b2, 2 * b2 - 2 * b),
        ("7", -2 * beta * b + (2 + g) * b - 8, -2 * beta * b2 + (2 - g) * b2, 2 * b2 - 2 * b),
        ("7'", -2 * beta * b + 2 * b + G * (1 - b) + g * b, -2 * beta * b2 + 2 * b2 - g * b2,
         2 * b2 - 2 * b),
        ("8", d * (40 - b + G * (b - 1)), -b + G * (b - 1) - 32, F(0)),
        ("9", d * (40 - b) + 160, -b, F(0)),
        ("10", 232 - b + G * (b - 1), -2 * beta * b2 + (2 - 2 * g) * b2, 2 * b2),
        ("11", 264 + r_nash, -2 * beta * b2 + (2 - g) * b2, 2 * b2),
    ]
    return [InequalityResult(i, F(l), F(r), F(k)) for i, l, r, k in out]


def gamma_conditions(b, Gamma, gamma) -> list:
    """The five conditions that fix gamma; returns (label, passed, slack)."""
    b, G, g = F(b), F(Gamma), F(gamma)
    b2 = b * b
    pairs = [
        ("i", -2 * b + (1 + g) * b + 8, -g * b2),
        ("ii", g * b - 8, -g * b2),
        ("iii", 232 - b + G * (b - 1), -2 * g * b2),
        ("iv", 264 + G * (1 - b), -g * b2),
        ("v", G * (1 - b) + g * b, -g * b2),
    ]
    return [(k, l < r, r - l) for k, l, r in pairs]


def check_inequalities(params: ParameterSet, dim: int = 3) -> LedgerReport:
    """Evaluate inequalities (1)-(11) and (7') exactly, at beta and at beta' = 1."""
    if dim not in (2, 3):
        raise ValueError("dim must be 2 or 3")
    rep = LedgerReport(params=params, dim=dim)
    rep.rows = _rows(params, F(params.beta), dim)
    rep.baseline = _rows(params, F(1), dim)
    rep.gamma_conditions = gamma_conditions(params.b, params.Gamma, params.gamma)
    room = beta_room(rep.baseline)
    if room is not None:
        rep.notes.append(f"beta' = 1 room: beta admissible on (1, 1 + {room})")
    rep.notes.append(f"absorption for (1): a >= 1/(alpha^2 C_R) = {1 / params.C_R} / alpha^2")
    return rep


def beta_room(baseline_rows) -> Fraction | None:
    """min over beta-dependent rows of slack/slope at beta' = 1, or None if any row fails."""
    if not all(r.passed for r in baseline_rows):
        return None
    ratios = [r.slack / r.beta_slope for r in baseline_rows if r.beta_slope > 0]
    return min(ratios)


def beta_continuity(params: ParameterSet, dim: int = 3) -> dict:
    """Witness that strictness survives on (1, 1 + s/K): endpoint slack is >= 0, interior > 0."""
    base = _rows(params, F(1), dim)
    room = beta_room(base)
    if room is None:
        return {"room": None, "interior_pass": False, "endpoint_nonneg": False}
    inner = _rows(params, 1 + room / 2, dim)
    edge = _rows(params, 1 + room, dim)
    return {
        "room": room,
        "interior_pass": all(r.passed for r in inner),
        "endpoint_nonneg": all(r.slack >= 0 for r in edge),
        "binding": [r.id for r in edge if r.slack == 0],
    }


def _largest_dyadic(pred: Callable[[Fraction], bool], max_power: int = 64) -> Fraction:
    for k in range(1, max_power + 1):
        g = F(1, 2**k)
        if pred(g):
            return g
    raise ValueError("no dyadic gamma found")


def suggest_parameters(b: int = 601, Gamma=F(1, 2), dim: int = 3, C_R=F(1, 100)) -> ParameterSet:
    """Follow the recipe: Gamma, b, N_dec, d, gamma, then beta = 1 + room/2."""
    G = F(Gamma)
    bb = F(b)
    N = 1
    while not 64 * (N + 4) < bb * N * (1 - G - G / bb):
        N += 1
        if N > 10_000:
            raise ValueError("no N_dec satisfies step (4)")
    d = 1
    while not (d * (40 - bb + G * (bb - 1)) < -bb + G * (bb - 1) - 32
               and d * (40 - bb) + 160 < -bb):
        d += 1
        if d > 10_000:
            raise ValueError("no d satisfies step (5) and (9)")
    gamma = _largest_dyadic(lambda g: all(ok for _, ok, _ in gamma_conditions(bb, G, g)))
    trial = ParameterSet(b=b, beta=F(1), Gamma=G, gamma=gamma, N_dec=N, d=d, C_R=F(C_R))
    room = beta_room(_rows(trial, F(1), dim))
    if room is None:
        raise ValueError("recipe output fails at beta' = 1; choose a larger b")
    return trial.with_beta(1 + room / 2)


def derive_scales(params: ParameterSet, q: int) -> dict:
    """Exponents of each scale in units of b^q log a (exact).

    lambda_q = a^(b^q) has exponent 1; r_q = (lambda_q/lambda_{q+1})^Gamma has
    Gamma(1 - b).
    """
    b = F(params.b)
    return {
        "q": q,
        "unit": f"b^{q} log a",
        "lambda_q": F(1),
        "lambda_q+1": b,
        "lambda_q+2": b * b,
        "delta_q": -2 * F(params.beta),
        "delta_q+1": -2 * F(params.beta) * b,
        "delta'_q": F(-2),
        "ell": F(-8),
        "tau_q": F(-24),
        "r_q": F(params.Gamma) * (1 - b),
    }


def scale_value(params: ParameterSet, q: int, name: str) -> float:
    """Float value of a derived scale; only sensible for tiny toy a, b, q."""
    e = derive_scales(params, q)[name]
    return float(params.a) ** float(params.b**q * e)


# key = value files

def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in ("a", "b", "N_dec", "d"):
        return int(raw)
    return F(raw)


def parse_parameter_text(text: str) -> ParameterSet:
    vals = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        if k not in PARAM_KEYS:
            raise ValueError(f"line {n}: unknown key {k!r}")
        vals[k] = _parse_value(k, v)
    missing = [k for k in ("b", "beta", "Gamma", "gamma", "N_dec", "d") if k not in vals]
    if missing:
        raise ValueError(f"missing keys: {', '.join(missing)}")
    return ParameterSet(**vals)


def format_parameter_text(p: ParameterSet) -> str:
    return "".join(f"{k} = {getattr(p, k)}\n" for k in PARAM_KEYS)


def load_parameters(path) -> ParameterSet:
    return parse_parameter_text(Path(path).read_text())


def save_parameters(p: ParameterSet, path) -> None:
    Path(path).write_text(format_parameter_text(p))
