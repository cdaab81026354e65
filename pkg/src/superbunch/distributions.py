"""Per-mode photon-number laws of down-converted light.

All PMFs are evaluated in the log domain with ``gammaln`` and exponentiated
last, so they stay finite far beyond the point where ``n!`` overflows.
Sampling switches from exact inverse-CDF draws to continuum limits once the
mean exceeds :data:`EXACT_MEAN_MAX`.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy.special import gammaln

#: means above this are sampled from continuum limits
EXACT_MEAN_MAX = 1e4
#: pmf() refuses means above this
PMF_MEAN_CAP = 1e6

LOG2 = math.log(2.0)


class ContinuumRegimeError(ValueError):
    """Raised when a discrete PMF is requested at a mean above the cap."""


class Kind(str, enum.Enum):
    THERMAL = "thermal"
    SQUEEZED = "squeezed"
    POISSON = "poisson"
    TWIN = "twin"

    @classmethod
    def parse(cls, value: "str | Kind") -> "Kind":
        if isinstance(value, cls):
            return value
        aliases = {"squeezed_vacuum": "squeezed", "sv": "squeezed", "coherent": "poisson",
                   "twin_beam": "twin", "geometric": "thermal"}
        key = str(value).lower().replace("-", "_")
        return cls(aliases.get(key, key))


@dataclass(frozen=True)
class PhotonDistribution:
    """Photon-number law of one mode.

    ``TWIN`` is the joint law of two conjugate channels carrying identical
    photon numbers; its ``pmf``/``moments`` describe either marginal, which is
    thermal.
    """

    kind: Kind
    mean_photons: float

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind.parse(self.kind))
        m = float(self.mean_photons)
        if not (m > 0 and math.isfinite(m)):
            raise ValueError("mean must be positive and finite")
        object.__setattr__(self, "mean_photons", m)

    @property
    def exact(self) -> bool:
        return self.mean_photons <= EXACT_MEAN_MAX

    def sample(self, rng: np.random.Generator, pulses: int) -> np.ndarray:
        return sample(self, rng, pulses)


class Moments(NamedTuple):
    mean: float
    variance: float
    g2: float


def moments(dist: PhotonDistribution) -> Moments:
    """Closed-form mean, variance and normally ordered g2 = <n(n-1)>/<n>^2."""
    m = dist.mean_photons
    if dist.kind is Kind.SQUEEZED:
        return Moments(m, 2.0 * m * (m + 1.0), 3.0 + 1.0 / m)
    if dist.kind is Kind.POISSON:
        return Moments(m, m, 1.0)
    return Moments(m, m * m + m, 2.0)


def cross_g2(dist: PhotonDistribution) -> float:
    """Signal-idler correlation <n_s n_i>/(<n_s><n_i>) of a twin beam."""
    if dist.kind is not Kind.TWIN:
        raise ValueError("cross_g2 is defined for twin beams only")
    return 2.0 + 1.0 / dist.mean_photons


def truncation(dist: PhotonDistribution) -> int:
    """Largest photon number kept in tabulated PMFs.

    mean + 40 sd + 50 leaves a tail below 1e-12 for all four laws, including
    the heavy chi-square-like tail of squeezed vacuum.
    """
    var = moments(dist).variance
    return int(math.ceil(dist.mean_photons + 40.0 * math.sqrt(var))) + 50


def log_pmf(dist: PhotonDistribution, n) -> np.ndarray:
    """Natural log of P(n); ``-inf`` where the probability is exactly zero."""
    n = np.asarray(n)
    if np.any(n < 0):
        raise ValueError("photon number must be non-negative")
    if dist.mean_photons > PMF_MEAN_CAP:
        raise ContinuumRegimeError(
            f"mean {dist.mean_photons:g} exceeds {PMF_MEAN_CAP:g}; use continuum sampler")
    m = dist.mean_photons
    nf = n.astype(float)
    if dist.kind in (Kind.THERMAL, Kind.TWIN):
        return nf * math.log(m) - (nf + 1.0) * math.log1p(m)
    if dist.kind is Kind.POISSON:
        return nf * math.log(m) - m - gammaln(nf + 1.0)
    # even n only: n!/(2^n (n/2)!^2) * m^(n/2) / (m+1)^(n/2 + 1/2)
    half = nf / 2.0
    with np.errstate(invalid="ignore"):
        out = (gammaln(nf + 1.0) - nf * LOG2 - 2.0 * gammaln(half + 1.0)
               + half * math.log(m) - (half + 0.5) * math.log1p(m))
    return np.where(n % 2 == 0, out, -np.inf)


def pmf(dist: PhotonDistribution, n):
    """P(n) for a scalar or array of photon numbers."""
    p = np.exp(log_pmf(dist, n))
    return float(p) if np.ndim(p) == 0 else p


@lru_cache(maxsize=64)
def pmf_table(dist: PhotonDistribution) -> np.ndarray:
    """P(0..truncation(dist)) as a read-only array."""
    table = pmf(dist, np.arange(truncation(dist) + 1))
    table.setflags(write=False)
    return table


def joint_pmf(dist: PhotonDistribution, n1, n2):
    """Joint P(n1, n2) of a twin beam: thermal on the diagonal, zero elsewhere."""
    if dist.kind is not Kind.TWIN:
        raise ValueError("joint_pmf is defined for twin beams only")
    n1, n2 = np.asarray(n1), np.asarray(n2)
    p = np.where(n1 == n2, np.exp(log_pmf(dist, n1)), 0.0)
    return float(p) if np.ndim(p) == 0 else p


@lru_cache(maxsize=64)
def _cdf(dist: PhotonDistribution) -> np.ndarray:
    cdf = np.cumsum(pmf_table(dist))
    cdf /= cdf[-1]
    cdf.setflags(write=False)
    return cdf


def sample(dist: PhotonDistribution, rng: np.random.Generator, pulses: int) -> np.ndarray:
    """Draw per-pulse photon numbers.

    Exact regime (mean <= 1e4): int64 draws by inverse CDF of the tabulated
    PMF. Continuum regime: float64 draws from the large-mean limits
    (thermal ``m*Exp(1)``, squeezed ``m*Z^2``, Poisson matched normal).
    Twin beams return shape ``(pulses, 2)`` with both columns equal.
    """
    pulses = int(pulses)
    if pulses < 1:
        raise ValueError("pulses must be >= 1")
    m = dist.mean_photons
    if dist.exact:
        u = rng.random(pulses)
        n = np.searchsorted(_cdf(dist), u, side="right").astype(np.int64)
    elif dist.kind is Kind.SQUEEZED:
        n = m * rng.standard_normal(pulses) ** 2
    elif dist.kind is Kind.POISSON:
        n = np.maximum(m + math.sqrt(m) * rng.standard_normal(pulses), 0.0)
    else:
        n = m * rng.standard_exponential(pulses)
    if dist.kind is Kind.TWIN:
        return np.column_stack([n, n])
    return n


def normally_ordered_g2(n) -> tuple[float, float]:
    """Estimate <n(n-1)>/<n>^2 from photon-number samples, with a delta-method SE."""
    n = np.asarray(n, dtype=float)
    if n.size < 2:
        raise ValueError("need at least two samples")
    a = n * (n - 1.0)
    ma, mb = a.mean(), n.mean()
    if mb == 0:
        raise ValueError("zero mean photon number")
    g = ma / mb**2
    # gradient of a/b^2 is (1/b^2, -2a/b^3)
    cov = np.cov(np.vstack([a, n])) / n.size
    grad = np.array([1.0 / mb**2, -2.0 * ma / mb**3])
    return float(g), float(math.sqrt(max(grad @ cov @ grad, 0.0)))
