"""Plackett-Luce distribution core.

A partial ranking of N out of V alternatives is built by repeatedly picking
one of the remaining alternatives with probability proportional to its
support weight ("multinomial without replacement").  Unranked alternatives
are marginalized out, so the log mass of a length-N ranking is

    sum_n [ ln w[a_n] - ln(1 - sum_{c<n} w[a_c]) ].
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Ranking",
    "StructuralError",
    "validate_support",
    "pl_log_mass",
    "pl_sample",
    "enumerate_rankings",
]

# Interior denominators closer to zero than this are treated as malformed
# input rather than clamped.
DENOM_TOL = 1e-14
_SUM_TOL = 1e-10


class StructuralError(ValueError):
    """A ranking is incompatible with the given support weights."""


@dataclass(frozen=True)
class Ranking:
    """An ordered selection of distinct alternatives, 1-based.

    ``entries[n]`` is the alternative chosen at rank level n+1;
    ``n_alternatives`` is the size V of the choice set.
    """

    entries: tuple[int, ...]
    n_alternatives: int

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(int(e) for e in self.entries))
        n, v = len(self.entries), self.n_alternatives
        if not 1 <= n <= v:
            raise ValueError(f"ranking length {n} must be in [1, {v}]")
        if len(set(self.entries)) != n:
            raise ValueError("ranking entries must be distinct")
        if any(not 1 <= e <= v for e in self.entries):
            raise ValueError(f"ranking entries must lie in 1..{v}")

    def __len__(self):
        return len(self.entries)


def validate_support(weights, allow_zero=False):
    """Check and return a support vector as a float array.

    Weights must be non-negative and sum to 1.  Zeros are only permitted
    when ``allow_zero`` is set (frozen fixed-subgroup vectors).
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size < 1:
        raise ValueError("support vector must be a non-empty 1-d array")
    if np.any(w < 0.0):
        raise ValueError("support weights must be non-negative")
    if not allow_zero and np.any(w == 0.0):
        raise ValueError("zero support weights only allowed in fixed subgroups")
    if abs(w.sum() - 1.0) > _SUM_TOL:
        raise ValueError(f"support weights sum to {w.sum()!r}, expected 1")
    return w


def pl_log_mass(theta, ranking: Ranking) -> float:
    """Log mass of a partial ranking under support weights ``theta``.

    Returns -inf if a ranked alternative has zero weight.  Raises
    StructuralError if an interior denominator is not positive, which can
    only happen with malformed fixed-subgroup weights.
    """
    w = np.asarray(theta, dtype=np.float64)
    if w.size != ranking.n_alternatives:
        raise ValueError("support vector length does not match choice set size")
    total = 0.0
    consumed = 0.0
    for n, a in enumerate(ranking.entries):
        denom = 1.0 - consumed
        if denom <= DENOM_TOL:
            raise StructuralError(
                f"denominator {denom!r} at rank level {n + 1} is not positive"
            )
        wa = w[a - 1]
        if wa == 0.0:
            return -np.inf
        total += np.log(wa) - np.log(denom)
        consumed += wa
    return float(total)


def pl_sample(theta, n_levels: int, rng: np.random.Generator) -> Ranking:
    """Draw a length-``n_levels`` partial ranking by sequential selection.

    At each level one of the remaining alternatives is chosen with
    probability proportional to its remaining weight.
    """
    w = np.asarray(theta, dtype=np.float64)
    v = w.size
    if not 1 <= n_levels <= v:
        raise ValueError(f"n_levels {n_levels} must be in [1, {v}]")
    if int(np.count_nonzero(w > 0.0)) < n_levels:
        raise ValueError("fewer positive-weight alternatives than rank levels")
    remaining = w.copy()
    entries = []
    for _ in range(n_levels):
        probs = remaining / remaining.sum()
        pick = int(rng.choice(v, p=probs))
        entries.append(pick + 1)
        remaining[pick] = 0.0
    return Ranking(tuple(entries), v)


def enumerate_rankings(v: int, n_levels: int):
    """All length-``n_levels`` partial permutations of {1..v}; test helper."""
    for perm in itertools.permutations(range(1, v + 1), n_levels):
        yield Ranking(perm, v)
