"""Loss, beamsplitter and analog detection of per-pulse photon numbers.

Integer arrays are treated as exact photon counts and thinned binomially.
Float arrays belong to the continuum regime and are thinned with the
moment-matched Gaussian (mean eta*n, variance eta*(1-eta)*n).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .rng import BLOCK_SIZE, map_blocks

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))
#: 70 nV*s per 8e3 detected photons
VOLTS_PER_PHOTON = 70.0 / 8000.0
NOISE_FWHM = 10.0
BOOTSTRAP_BLOCKS = 100
BOOTSTRAP_RESAMPLES = 1000


class UndefinedEstimatorError(ArithmeticError):
    """g2 estimator has a zero mean signal in its denominator."""


@dataclass(frozen=True)
class Loss:
    transmission: float

    def __post_init__(self):
        if not 0 < self.transmission <= 1:
            raise ValueError("transmission must be in (0, 1]")


@dataclass(frozen=True)
class Beamsplitter:
    transmittance: float = 0.5

    def __post_init__(self):
        if not 0 < self.transmittance < 1:
            raise ValueError("transmittance must be in (0, 1)")


@dataclass(frozen=True)
class Detector:
    """Analog detector: nV*s per photon plus additive Gaussian noise (given as FWHM)."""

    volts_per_photon: float = VOLTS_PER_PHOTON
    noise_fwhm: float = NOISE_FWHM

    def __post_init__(self):
        if not self.volts_per_photon > 0:
            raise ValueError("volts_per_photon must be positive")
        if not self.noise_fwhm >= 0:
            raise ValueError("noise_fwhm must be non-negative")

    @property
    def noise_sigma(self) -> float:
        return self.noise_fwhm / FWHM_PER_SIGMA


def _thin(n: np.ndarray, p: float, rng: np.random.Generator) -> np.ndarray:
    if p == 1.0:
        return n.copy()
    if np.issubdtype(n.dtype, np.integer):
        return rng.binomial(n, p)
    kept = p * n + np.sqrt(p * (1.0 - p) * n) * rng.standard_normal(n.shape)
    return np.clip(kept, 0.0, n)


def apply_loss(n, eta: float, rng: np.random.Generator) -> np.ndarray:
    """Keep each photon with probability ``eta``."""
    Loss(eta)
    return _thin(np.asarray(n), eta, rng)


def split(n, transmittance: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Partition photons between the two beamsplitter outputs."""
    Beamsplitter(transmittance)
    n = np.asarray(n)
    n1 = _thin(n, transmittance, rng)
    return n1, n - n1


def detect(n, detector: Detector, rng: np.random.Generator) -> np.ndarray:
    """Integrated detector signal in nV*s."""
    s = detector.volts_per_photon * np.asarray(n, dtype=float)
    if detector.noise_fwhm > 0:
        s = s + detector.noise_sigma * rng.standard_normal(s.shape)
    return s


@dataclass
class PulseRecords:
    """Signal pairs (S1, S2) in nV*s, one row per pulse."""

    s1: np.ndarray
    s2: np.ndarray

    def __post_init__(self):
        self.s1 = np.asarray(self.s1, dtype=float)
        self.s2 = np.asarray(self.s2, dtype=float)
        if self.s1.shape != self.s2.shape or self.s1.ndim != 1:
            raise ValueError("s1 and s2 must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(self.s1)) and np.all(np.isfinite(self.s2))):
            raise ValueError("signals must be finite")

    def __len__(self) -> int:
        return self.s1.size

    @classmethod
    def concat(cls, parts: Iterable["PulseRecords"]) -> "PulseRecords":
        parts = list(parts)
        return cls(np.concatenate([p.s1 for p in parts]), np.concatenate([p.s2 for p in parts]))

    def to_bytes(self) -> bytes:
        """Little-endian float64 pairs ``s1, s2`` per pulse."""
        return np.column_stack([self.s1, self.s2]).astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "PulseRecords":
        arr = np.frombuffer(data, dtype="<f8")
        if arr.size % 2:
            raise ValueError("binary record stream must hold an even number of float64 values")
        arr = arr.reshape(-1, 2)
        return cls(arr[:, 0].astype(float), arr[:, 1].astype(float))

    def to_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pulse_index", "s1_nvs", "s2_nvs"])
        for i, (a, b) in enumerate(zip(self.s1.tolist(), self.s2.tolist())):
            w.writerow([i, repr(a), repr(b)])

    @classmethod
    def from_csv(cls, fh) -> "PulseRecords":
        rows = list(csv.DictReader(fh))
        idx = [int(r["pulse_index"]) for r in rows]
        if idx != list(range(len(rows))):
            raise ValueError("pulse_index must run 0, 1, 2, ...")
        return cls([float(r["s1_nvs"]) for r in rows], [float(r["s2_nvs"]) for r in rows])

    def csv_text(self) -> str:
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue()


@dataclass(frozen=True)
class OpticalChain:
    """Losses, then a beamsplitter, then one detector per output."""

    losses: tuple[Loss, ...] = ()
    beamsplitter: Beamsplitter = field(default_factory=Beamsplitter)
    detectors: tuple[Detector, Detector] = (Detector(), Detector())

    @classmethod
    def build(cls, eta: float = 1.0, transmittance: float = 0.5,
              volts_per_photon: float = VOLTS_PER_PHOTON, noise_fwhm: float = NOISE_FWHM):
        det = Detector(volts_per_photon, noise_fwhm)
        losses = () if eta == 1.0 else (Loss(eta),)
        return cls(losses, Beamsplitter(transmittance), (det, det))

    def run(self, n, rng: np.random.Generator) -> PulseRecords:
        """Photon numbers per pulse -> detected signal pairs.

        A 2-column input is a pair of conjugate beams (twin beam); it bypasses
        the beamsplitter and each column goes to its own detector.
        """
        n = np.asarray(n)
        if n.ndim == 2:
            n1, n2 = n[:, 0], n[:, 1]
            for loss in self.losses:
                n1 = apply_loss(n1, loss.transmission, rng)
                n2 = apply_loss(n2, loss.transmission, rng)
        else:
            for loss in self.losses:
                n = apply_loss(n, loss.transmission, rng)
            n1, n2 = split(n, self.beamsplitter.transmittance, rng)
        return PulseRecords(detect(n1, self.detectors[0], rng), detect(n2, self.detectors[1], rng))


class G2Estimate(NamedTuple):
    g2: float
    std_error: float


def _pairwise_blocks(x: np.ndarray, blocks: int) -> np.ndarray:
    # fixed contiguous partition; numpy's pairwise sum inside each block
    return np.array([b.sum() for b in np.array_split(x, blocks)])


def estimate_g2(records: PulseRecords, dark: PulseRecords | None = None,
                blocks: int = BOOTSTRAP_BLOCKS, resamples: int = BOOTSTRAP_RESAMPLES,
                bootstrap_seed: int = 0) -> G2Estimate:
    """``<S1 S2> / (<S1><S2>)`` with a block-bootstrap standard error.

    The records are cut into ``blocks`` contiguous blocks and whole blocks are
    resampled, so correlations within a block are kept. Passing ``dark``
    (records taken with no light) subtracts the dark pedestals and dark
    cross-covariance first; the default estimator applies no correction.
    """
    if len(records) < 2:
        raise ValueError("need at least two pulse records")
    s1, s2 = records.s1, records.s2
    c12 = 0.0
    if dark is not None:
        if len(dark) < 2:
            raise ValueError("need at least two dark records")
        d1, d2 = dark.s1.mean(), dark.s2.mean()
        c12 = float(np.mean((dark.s1 - d1) * (dark.s2 - d2)))
        s1, s2 = s1 - d1, s2 - d2
    m1, m2 = s1.mean(), s2.mean()
    if m1 == 0 or m2 == 0:
        raise UndefinedEstimatorError("mean signal is zero; g2 undefined")
    g2 = (np.mean(s1 * s2) - c12) / (m1 * m2)

    nb = min(blocks, len(s1))
    sizes = np.array([len(b) for b in np.array_split(s1, nb)], dtype=float)
    b1 = _pairwise_blocks(s1, nb)
    b2 = _pairwise_blocks(s2, nb)
    b12 = _pairwise_blocks(s1 * s2, nb)
    rng = np.random.default_rng(bootstrap_seed)
    pick = rng.integers(0, nb, size=(resamples, nb))
    n = sizes[pick].sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        boot = (b12[pick].sum(axis=1) / n - c12) / (b1[pick].sum(axis=1) / n * b2[pick].sum(axis=1) / n)
    boot = boot[np.isfinite(boot)]
    se = float(np.std(boot, ddof=1)) if boot.size > 1 else math.inf
    return G2Estimate(float(g2), se)


def simulate_records(source, chain: OpticalChain, pulses: int, seed: int,
                     key: Sequence[int] = (), workers: int = 1,
                     block_size: int = BLOCK_SIZE) -> PulseRecords:
    """Sample ``source`` and push it through ``chain`` block by block.

    ``source`` is anything with ``sample(rng, pulses)`` or a callable of the
    same signature.
    """
    draw = source.sample if hasattr(source, "sample") else source

    def block(rng, n):
        return chain.run(draw(rng, n), rng)

    return PulseRecords.concat(map_blocks(block, pulses, seed, key, workers, block_size))
