"""Rational transfer functions with input delays.

Polynomial coefficients are stored in ascending powers of s, so ``[1, 15.9]``
is the polynomial ``1 + 15.9 s``.  A model entry like

    10.12 * (1 - 3.41 s) / ((1 + 15.9 s)(1 + 24.2 s)) * exp(-2.5 s)

is built from the gain, the numerator/denominator factors and the delay in
seconds; factored denominators are expanded at construction time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "RationalTransfer",
    "TransferMatrix",
    "Violation",
    "ValidationReport",
    "poly_trim",
    "poly_mul",
    "poly_from_factors",
    "evaluate",
    "validate",
]

_POLE_TOL = 1e-14


def poly_trim(coeffs) -> np.ndarray:
    """Drop trailing (highest-order) zero coefficients, keeping at least one."""
    c = np.atleast_1d(np.asarray(coeffs, dtype=float))
    if c.ndim != 1:
        raise ValueError("polynomial coefficients must be one-dimensional")
    nz = np.nonzero(c)[0]
    if nz.size == 0:
        return np.zeros(1)
    return c[: nz[-1] + 1].copy()


def poly_mul(a, b) -> np.ndarray:
    """Product of two ascending-coefficient polynomials."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    return np.convolve(a, b)


def poly_from_factors(factors) -> np.ndarray:
    """Expand a product of ascending-coefficient factors.

    ``[[1, 15.9], [1, 24.2]]`` expands ``(1 + 15.9 s)(1 + 24.2 s)``.
    An empty factor list is the constant polynomial 1.
    """
    out = np.ones(1)
    for f in factors:
        out = poly_mul(out, f)
    return poly_trim(out)


def poly_eval(coeffs, s: complex) -> complex:
    """Evaluate an ascending-coefficient polynomial at a complex point."""
    acc = 0.0 + 0.0j
    for c in reversed(np.atleast_1d(coeffs)):
        acc = acc * s + c
    return acc


def poly_degree(coeffs) -> int:
    """Degree after trimming; the zero polynomial reports degree -1."""
    c = poly_trim(coeffs)
    if c.size == 1 and c[0] == 0.0:
        return -1
    return c.size - 1


@dataclass(frozen=True)
class RationalTransfer:
    """One SISO proper rational transfer function b(s)/a(s) * exp(-delay*s).

    num, den are ascending-coefficient polynomials; delay is in seconds.
    Immutable after construction and safe to share across threads.
    """

    num: np.ndarray
    den: np.ndarray
    delay: float = 0.0

    def __post_init__(self):
        num = poly_trim(self.num)
        den = poly_trim(self.den)
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)
        object.__setattr__(self, "delay", float(self.delay))
        if den[-1] == 0.0:
            raise ValueError("denominator has zero leading coefficient")
        if poly_degree(num) > poly_degree(den):
            raise ValueError(
                f"improper transfer function: deg(num)={poly_degree(num)} "
                f"> deg(den)={poly_degree(den)}"
            )
        if not np.isfinite(self.delay) or self.delay < 0.0:
            raise ValueError(f"delay must be finite and nonnegative, got {self.delay}")

    @classmethod
    def from_factors(cls, gain=1.0, num_factors=(), den_factors=(), delay=0.0):
        """Build from a gain and factored numerator/denominator polynomials."""
        num = gain * poly_from_factors(num_factors)
        den = poly_from_factors(den_factors)
        return cls(num=num, den=den, delay=delay)

    @classmethod
    def zero(cls):
        return cls(num=np.zeros(1), den=np.ones(1), delay=0.0)

    @property
    def order(self) -> int:
        """State dimension of a minimal realization: deg(den)."""
        return self.den.size - 1

    def is_zero(self) -> bool:
        return bool(np.all(self.num == 0.0))

    def is_strictly_proper(self) -> bool:
        """True when deg(num) < deg(den); the zero function counts as strict."""
        return self.is_zero() or poly_degree(self.num) < poly_degree(self.den)

    def dc_gain(self) -> float:
        """Ratio of constant coefficients; inf for a pole at the origin."""
        if self.den[0] == 0.0:
            return np.inf if self.num[0] != 0.0 else np.nan
        return self.num[0] / self.den[0]


class PoleEvaluationError(ValueError):
    """Raised when a transfer function is evaluated at (or near) a pole."""


def evaluate(tf: RationalTransfer, s: complex) -> complex:
    """Frequency response b(s)/a(s) * exp(-delay*s) at one complex point."""
    a = poly_eval(tf.den, s)
    if abs(a) < _POLE_TOL:
        raise PoleEvaluationError(f"denominator vanishes at s={s} (|a(s)|={abs(a):.3e})")
    return poly_eval(tf.num, s) / a * np.exp(-tf.delay * s)


@dataclass(frozen=True)
class Violation:
    """A single validation failure at entry (row, col)."""

    row: int
    col: int
    rule: str
    message: str

    def __str__(self):
        return f"entry ({self.row}, {self.col}): {self.rule}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple = ()

    @property
    def ok(self) -> bool:
        return len(self.violations) == 0

    def __str__(self):
        if self.ok:
            return "valid"
        return "\n".join(str(v) for v in self.violations)


@dataclass(frozen=True)
class TransferMatrix:
    """Grid of RationalTransfer entries with a role tag.

    kind is "deterministic" (input-to-output map), "stochastic" (noise
    shaping, strictly proper, delay-free) or "disturbance" (same rules as
    deterministic).  Entries are stored row-major: entries[i][j] maps input
    j to output i.
    """

    entries: tuple
    kind: str = "deterministic"

    _KINDS = ("deterministic", "stochastic", "disturbance")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown transfer-matrix kind {self.kind!r}")
        rows = tuple(tuple(row) for row in self.entries)
        if len(rows) == 0:
            raise ValueError("transfer matrix needs at least one row")
        width = len(rows[0])
        for r in rows:
            if len(r) != width:
                raise ValueError("ragged transfer matrix")
            for g in r:
                if not isinstance(g, RationalTransfer):
                    raise TypeError("entries must be RationalTransfer instances")
        object.__setattr__(self, "entries", rows)

    @property
    def n_outputs(self) -> int:
        return len(self.entries)

    @property
    def n_inputs(self) -> int:
        return len(self.entries[0])

    def __getitem__(self, idx):
        i, j = idx
        return self.entries[i][j]


def validate(model: TransferMatrix) -> ValidationReport:
    """Check matrix entries against the rules of their role.

    All entries must be proper (guaranteed by construction, re-checked for
    defensiveness).  Stochastic entries must additionally be strictly proper
    and delay-free.  Returns a report rather than raising.
    """
    violations = []
    for i, row in enumerate(model.entries):
        for j, g in enumerate(row):
            if poly_degree(g.num) > poly_degree(g.den):
                violations.append(
                    Violation(i, j, "properness", "deg(num) exceeds deg(den)")
                )
            if model.kind == "stochastic":
                if not g.is_strictly_proper():
                    violations.append(
                        Violation(
                            i, j, "strictness",
                            "stochastic entry must be strictly proper",
                        )
                    )
                if g.delay != 0.0:
                    violations.append(
                        Violation(
                            i, j, "delay-on-stochastic",
                            f"stochastic entry has delay {g.delay}",
                        )
                    )
    return ValidationReport(violations=tuple(violations))
