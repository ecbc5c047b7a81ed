"""Prior probability that two matrix entries share an atom.

Two pixels tie (fall in the same column cluster) with probability
e^beta / (alpha + e^beta). Tied pixels share one weight vector omega, and
the same row of tied pixels always shares its atom; otherwise the two
atoms are independent draws from the relevant weight vectors.

Shared atoms: omega ~ Dirichlet_L(b0). Common atoms: omega ~ GEM(nu) over
one common atom sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import DomainError

_CHUNK = 10_000


@dataclass(frozen=True)
class CoclustQuery:
    alpha: float
    beta: float
    same_row: bool
    variant: str = "shared"   # "shared" or "common"
    b0: float = 1.0
    L: int = 2
    nu: float = 1.0

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise DomainError("alpha must be positive")
        if not (self.beta >= 0 and math.isfinite(self.beta)):
            raise DomainError("beta must be non-negative")
        if self.variant == "shared":
            if not self.b0 > 0 or self.L < 2:
                raise DomainError("shared atoms need b0 > 0 and L >= 2")
        elif self.variant == "common":
            if not self.nu > 0:
                raise DomainError("common atoms need nu > 0")
        else:
            raise DomainError(f"unknown variant {self.variant!r}")

    @property
    def tie_probability(self) -> float:
        # e^beta / (alpha + e^beta), written to stay finite for large beta
        return 1.0 / (1.0 + self.alpha * math.exp(-self.beta))


def coclust_probability(q: CoclustQuery) -> float:
    """Closed-form prior coclustering probability."""
    if q.variant == "shared":
        within = 1.0 if q.same_row else (1.0 + q.b0) / (1.0 + q.L * q.b0)
        across = 1.0 / q.L
    else:
        within = 1.0 if q.same_row else 1.0 / (1.0 + q.nu)
        across = 1.0 / (2.0 * q.nu + 1.0)
    tie = q.tie_probability
    return tie * within + (1.0 - tie) * across


def _dirichlet(rng, b0: float, L: int, n: int) -> np.ndarray:
    # Gamma(b0) = Gamma(b0 + 1) * U^(1/b0); normalized in the log domain so
    # that very small b0 does not underflow every component to zero
    logg = np.log(rng.gamma(b0 + 1.0, size=(n, L))) + np.log(rng.uniform(size=(n, L))) / b0
    logg -= logg.max(axis=1, keepdims=True)
    w = np.exp(logg)
    return w / w.sum(axis=1, keepdims=True)


def _gem_pair(rng, nu: float, truncation: int, tied: np.ndarray):
    """Atom indices of two draws from truncated GEM(nu) weights.

    Sticks are generated lazily, one level at a time, and only for samples
    still undecided; tied samples walk the same sticks.
    """
    n = tied.size
    z1 = np.full(n, -1)
    z2 = np.full(n, -1)
    for level in range(truncation - 1):
        open1, open2 = z1 < 0, z2 < 0
        idx = np.flatnonzero(open1 | open2)
        if idx.size == 0:
            break
        v1 = rng.beta(1.0, nu, size=idx.size)
        v2 = np.where(tied[idx], v1, rng.beta(1.0, nu, size=idx.size))
        u1 = rng.uniform(size=idx.size)
        u2 = rng.uniform(size=idx.size)
        z1[idx[open1[idx] & (u1 < v1)]] = level
        z2[idx[open2[idx] & (u2 < v2)]] = level
    z1[z1 < 0] = truncation - 1   # residual mass on the last atom
    z2[z2 < 0] = truncation - 1
    return z1, z2


def _categorical(rng, w: np.ndarray) -> np.ndarray:
    cum = np.cumsum(w, axis=1)
    u = rng.uniform(size=(w.shape[0], 1)) * cum[:, -1:]
    return np.minimum((cum < u).sum(axis=1), w.shape[1] - 1)


def coclust_mc_oracle(q: CoclustQuery, n_samples: int = 100_000, truncation: int = 200,
                      seed: int = 0) -> tuple[float, float]:
    """Monte Carlo estimate of the coclustering probability and its standard error."""
    if n_samples < 1 or truncation < 2:
        raise DomainError("need n_samples >= 1 and truncation >= 2")
    rng = np.random.default_rng(seed)

    hits = 0
    done = 0
    while done < n_samples:
        n = min(_CHUNK, n_samples - done)
        tied = rng.uniform(size=n) < q.tie_probability
        if q.variant == "shared":
            w1 = _dirichlet(rng, q.b0, q.L, n)
            w2 = np.where(tied[:, None], w1, _dirichlet(rng, q.b0, q.L, n))
            z1, z2 = _categorical(rng, w1), _categorical(rng, w2)
        else:
            z1, z2 = _gem_pair(rng, q.nu, truncation, tied)
        same = z1 == z2
        if q.same_row:
            same |= tied
        hits += int(same.sum())
        done += n
    p = hits / n_samples
    return p, math.sqrt(p * (1.0 - p) / n_samples)


def coclust_table(alphas, betas, variant: str = "shared", b0: float = 1.0, L: int = 2,
                  nu: float = 1.0) -> list[dict]:
    """Closed-form probabilities over an (alpha, beta) grid, both row cases."""
    rows = []
    for a in alphas:
        for b in betas:
            for same in (True, False):
                q = CoclustQuery(float(a), float(b), same, variant, b0, L, nu)
                rows.append({"variant": variant, "alpha": q.alpha, "beta": q.beta, "same_row": same,
                             "b0": b0 if variant == "shared" else "", "L": L if variant == "shared" else "",
                             "nu": nu if variant == "common" else "", "probability": coclust_probability(q)})
    return rows
