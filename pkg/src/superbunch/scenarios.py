"""Synthetic end-to-end experiments: HBT runs, g2 scans, signal histograms,
coherent calibration and the pump-power gain curve."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import stats
from scipy.signal import fftconvolve

from .chain import (Beamsplitter, Detector, OpticalChain, detect, estimate_g2,
                    simulate_records)
from .distributions import (Kind, PhotonDistribution, cross_g2, moments,
                            pmf_table, truncation)
from .fitting import FOUR_LN2, FitError, GaussianFit, fit_gaussian
from .modes import (GainFit, compose_fractional_m, fit_gain, pdc_signal,
                    reduce_g2)
from .rng import map_blocks, stream

DEFAULT_M = 1.25
CENTER_WAVELENGTH = 709.3
ANGLE_FWHM = 4.1
SPECTRAL_FWHM = 0.22
HISTOGRAM_BIN = 2.0
GAMMA_MAX = 15.8


class HbtResult(NamedTuple):
    g2: float
    std_error: float
    expected: float


def expected_g2(kind, mean_photons: float, m: float = 1.0) -> float:
    """Model value of the HBT estimate for a source spread over ``m`` modes."""
    dist = PhotonDistribution(kind, mean_photons)
    single = cross_g2(dist) if dist.kind is Kind.TWIN else moments(dist).g2
    if dist.kind is Kind.POISSON:
        return 1.0
    return reduce_g2(single, m)


def source_for(kind, mean_photons: float, m: float = 1.0):
    """Single distribution for m = 1, a fractional-m mode composition otherwise."""
    if m == 1.0:
        return PhotonDistribution(kind, mean_photons)
    return compose_fractional_m(m, mean_photons, kind)


def run_hbt(kind, mean_photons: float, pulses: int, seed: int, m: float = 1.0,
            chain: OpticalChain | None = None, workers: int = 1) -> HbtResult:
    chain = OpticalChain.build() if chain is None else chain
    records = simulate_records(source_for(kind, mean_photons, m), chain, pulses, seed,
                               workers=workers)
    g2, se = estimate_g2(records)
    return HbtResult(g2, se, expected_g2(kind, mean_photons, m))


@dataclass
class ScanConfig:
    coordinate: str
    points: Sequence[float]
    center: float
    profile_fwhm: float
    pulses_per_point: int = 100_000
    base_m: float = DEFAULT_M
    mean_photons: float = 8000.0
    volts_per_photon: float = 70.0 / 8000.0
    noise_fwhm: float = 10.0

    def __post_init__(self):
        if self.coordinate not in ("angle_mrad", "wavelength_nm"):
            raise ValueError("coordinate must be angle_mrad or wavelength_nm")
        self.points = [float(x) for x in self.points]
        if not self.points:
            raise ValueError("scan needs at least one point")
        if not self.profile_fwhm > 0:
            raise ValueError("profile fwhm must be positive")
        if self.pulses_per_point < 1000:
            raise ValueError("pulses_per_point must be >= 1000")
        if not self.base_m >= 1:
            raise ValueError("base m must be >= 1")
        if not self.mean_photons > 0:
            raise ValueError("mean must be positive")

    @classmethod
    def angular(cls, half_width: float = 10.0, n_points: int = 21, **kw) -> "ScanConfig":
        kw.setdefault("profile_fwhm", ANGLE_FWHM)
        center = kw.pop("center", 0.0)
        pts = center + np.linspace(-half_width, half_width, n_points)
        return cls("angle_mrad", pts, center, **kw)

    @classmethod
    def spectral(cls, half_width: float = 0.5, n_points: int = 21, **kw) -> "ScanConfig":
        kw.setdefault("profile_fwhm", SPECTRAL_FWHM)
        center = kw.pop("center", CENTER_WAVELENGTH)
        pts = center + np.linspace(-half_width, half_width, n_points)
        return cls("wavelength_nm", pts, center, **kw)

    def overlap(self, x) -> np.ndarray:
        return np.exp(-FOUR_LN2 * (np.asarray(x) - self.center) ** 2 / self.profile_fwhm**2)


@dataclass
class ScanPoint:
    coordinate: float
    overlap: float
    g2: float
    std_error: float
    expected: float


@dataclass
class ScanResult:
    config: ScanConfig
    points: list[ScanPoint]
    fit: GaussianFit | None = None
    fit_error: str | None = None

    @property
    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (np.array([p.coordinate for p in self.points]),
                np.array([p.g2 for p in self.points]),
                np.array([p.std_error for p in self.points]))


class DegenerateMixture:
    """Per pulse: degenerate squeezed vacuum with probability ``w``, else thermal.

    Both branches carry the same mean and the same mode split, so the
    single-mode g2 moves linearly from 2 (w = 0) to 3 + 1/N (w = 1) and the
    scanned g2 profile has exactly the overlap-weight shape.
    """

    def __init__(self, weight: float, mean_photons: float, m: float):
        self.weight = float(weight)
        self.squeezed = compose_fractional_m(m, mean_photons, Kind.SQUEEZED)
        self.thermal = self.squeezed.with_kind(Kind.THERMAL)

    def sample(self, rng: np.random.Generator, pulses: int) -> np.ndarray:
        pick = rng.random(pulses) < self.weight
        sv = self.squeezed.sample(rng, pulses)
        th = self.thermal.sample(rng, pulses)
        return np.where(pick, sv, th)

    def expected_g2(self) -> float:
        comp = self.squeezed
        n = np.asarray(comp.per_mode_means)
        total = n.sum()
        # <n(n-1)> - <n>^2 summed over independent modes
        sv = np.sum(2.0 * n * n + n) / total**2
        th = np.sum(n * n) / total**2
        return 1.0 + self.weight * sv + (1.0 - self.weight) * th


def run_scan(config: ScanConfig, seed: int, workers: int = 1) -> ScanResult:
    """Simulate g2 at every scan coordinate, then fit baseline + Gaussian."""
    chain = OpticalChain.build(volts_per_photon=config.volts_per_photon,
                               noise_fwhm=config.noise_fwhm)
    points = []
    for i, x in enumerate(config.points):
        w = float(config.overlap(x))
        src = DegenerateMixture(w, config.mean_photons, config.base_m)
        records = simulate_records(src, chain, config.pulses_per_point, seed, key=(i,),
                                   workers=workers)
        g2, se = estimate_g2(records)
        points.append(ScanPoint(x, w, g2, se, src.expected_g2()))
    result = ScanResult(config, points)
    if len(points) >= 5:
        x, y, s = result.arrays
        try:
            result.fit = fit_gaussian(np.column_stack([x, y, s]))
        except FitError as exc:
            result.fit_error = str(exc)
    else:
        result.fit_error = "fewer than 5 points; no fit"
    return result


@dataclass
class Histogram:
    """Signal histogram with the model bin probabilities alongside."""

    edges: np.ndarray
    counts: np.ndarray
    theory: np.ndarray
    pulses: int
    mean_signal: float = 0.0
    kind: str = "vacuum"

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def width(self) -> float:
        return float(self.edges[1] - self.edges[0])

    @property
    def probability(self) -> np.ndarray:
        return self.counts / self.pulses

    @property
    def density(self) -> np.ndarray:
        return self.probability / self.width

    def tail_mass(self, threshold: float, theory: bool = False) -> float:
        """Probability of a signal at or above ``threshold`` (rounded to bin edges)."""
        p = self.theory if theory else self.probability
        return float(p[self.edges[:-1] >= threshold].sum())

    def fwhm(self) -> float:
        """FWHM of a Gaussian with the histogram's Sheppard-corrected variance."""
        p = self.probability
        c = self.centers
        mu = np.sum(p * c) / p.sum()
        var = np.sum(p * (c - mu) ** 2) / p.sum() - self.width**2 / 12.0
        return float(2.0 * math.sqrt(2.0 * math.log(2.0)) * math.sqrt(max(var, 0.0)))


def _edges(lo: float, hi: float, width: float) -> np.ndarray:
    lo = math.floor(lo / width) * width
    hi = math.ceil(hi / width) * width
    return lo + width * np.arange(int(round((hi - lo) / width)) + 1)


def _fine_masses(dist: PhotonDistribution, vpp: float, lo: float, h: float, ncells: int):
    """Mass of the noiseless signal ``vpp*n`` in cells of width ``h`` starting at ``lo``."""
    if dist.exact:
        table = pmf_table(dist)
        s = vpp * np.arange(table.size)
        idx = np.clip(np.floor((s - lo) / h).astype(np.int64), 0, ncells - 1)
        return np.bincount(idx, weights=table, minlength=ncells)
    m = dist.mean_photons
    law = {Kind.SQUEEZED: stats.gamma(a=0.5, scale=2.0 * m),
           Kind.POISSON: stats.norm(m, math.sqrt(m))}.get(dist.kind, stats.expon(scale=m))
    cell_edges = (lo + h * np.arange(ncells + 1)) / vpp
    return np.diff(law.cdf(cell_edges))


def _signal_top(dist: PhotonDistribution, vpp: float) -> float:
    if dist.exact:
        return vpp * truncation(dist)
    m = dist.mean_photons
    if dist.kind is Kind.POISSON:
        return vpp * (m + 40.0 * math.sqrt(m))
    # quantiles far beyond 1 - 1e-12 of Exp(1) and chi-square(1)
    return vpp * m * (60.0 if dist.kind is Kind.SQUEEZED else 35.0)


def _theory(dist: PhotonDistribution | None, detector: Detector, edges: np.ndarray,
            subdiv: int = 20) -> np.ndarray:
    width = edges[1] - edges[0]
    h = width / subdiv
    ncells = (edges.size - 1) * subdiv
    lo = edges[0]
    if dist is None:
        fine = np.zeros(ncells)
        fine[min(max(int(math.floor(-lo / h)), 0), ncells - 1)] = 1.0
    else:
        fine = _fine_masses(dist, detector.volts_per_photon, lo, h, ncells)
    sigma = detector.noise_sigma
    if sigma > 0:
        k = int(math.ceil(10.0 * sigma / h))
        grid = (np.arange(-k, k + 2) - 0.5) * h
        kernel = np.diff(stats.norm.cdf(grid / sigma))
        kernel /= kernel.sum()
        fine = fftconvolve(fine, kernel, mode="same")
        fine = np.clip(fine, 0.0, None)
    return fine.reshape(-1, subdiv).sum(axis=1)


def run_histogram(kind, mean_signal_nvs: float, pulses: int, detector: Detector | None = None,
                  seed: int = 0, bin_width: float = HISTOGRAM_BIN, workers: int = 1) -> Histogram:
    """Histogram of one detector's signal for a single-mode source.

    The model overlay is the exact bin probability: the PMF mapped to signal
    units and convolved with the detector noise Gaussian. For squeezed vacuum
    the even-only comb is far finer than a bin, so only its envelope shows.
    """
    detector = Detector() if detector is None else detector
    if not mean_signal_nvs > 0:
        raise ValueError("mean signal must be positive")
    dist = PhotonDistribution(kind, mean_signal_nvs / detector.volts_per_photon)
    if dist.kind is Kind.TWIN:
        raise ValueError("histograms are single-channel; use thermal for a twin-beam arm")
    signal = _collect(lambda rng, n: detect(dist.sample(rng, n), detector, rng),
                      pulses, seed, workers)
    return _histogram(signal, dist, detector, bin_width, pulses, mean_signal_nvs, dist.kind.value)


def run_noise_histogram(pulses: int, detector: Detector | None = None, seed: int = 0,
                        bin_width: float = HISTOGRAM_BIN, workers: int = 1) -> Histogram:
    """Histogram of the detector output with no light."""
    detector = Detector() if detector is None else detector
    signal = _collect(lambda rng, n: detect(np.zeros(n, dtype=np.int64), detector, rng),
                      pulses, seed, workers)
    return _histogram(signal, None, detector, bin_width, pulses, 0.0, "vacuum")


def _collect(func, pulses, seed, workers):
    return np.concatenate(map_blocks(func, pulses, seed, (), workers))


def _histogram(signal, dist, detector, bin_width, pulses, mean_signal, kind) -> Histogram:
    sigma = detector.noise_sigma
    top = 0.0 if dist is None else _signal_top(dist, detector.volts_per_photon)
    edges = _edges(min(-10.0 * sigma - bin_width, float(signal.min())),
                   max(top + 10.0 * sigma + bin_width, float(signal.max()) + bin_width), bin_width)
    counts, _ = np.histogram(signal, bins=edges)
    return Histogram(edges, counts, _theory(dist, detector, edges), int(pulses), mean_signal, kind)


class CalibrationResult(NamedTuple):
    g2: float
    std_error: float
    noise_dominated: bool


def run_calibration(mean_photons: float, pulses: int, detector: Detector | None = None,
                    seed: int = 0, transmittance: float = 0.5, workers: int = 1) -> CalibrationResult:
    """Coherent (Poisson) light through the HBT chain.

    ``noise_dominated`` is set when either channel's mean signal is below the
    detector noise sigma; the estimate is then unreliable.
    """
    detector = Detector() if detector is None else detector
    if not mean_photons > 0:
        raise ValueError("mean must be positive")
    chain = OpticalChain((), Beamsplitter(transmittance), (detector, detector))
    records = simulate_records(PhotonDistribution(Kind.POISSON, mean_photons), chain, pulses, seed,
                               workers=workers)
    g2, se = estimate_g2(records)
    weakest = detector.volts_per_photon * mean_photons * min(transmittance, 1 - transmittance)
    return CalibrationResult(g2, se, bool(weakest < detector.noise_sigma))


@dataclass
class GainCurve:
    powers: np.ndarray
    signals: np.ndarray
    fit: GainFit
    true_gamma: float | None = None
    true_scale: float | None = None
    model: np.ndarray = field(default=None, repr=False)


def synthetic_gain_curve(seed: int, gamma_max: float = GAMMA_MAX, scale: float = 1.0,
                         powers=None, noise: float = 0.01) -> tuple[np.ndarray, np.ndarray]:
    """Pump powers (mW) and PDC signals with multiplicative Gaussian noise."""
    powers = np.linspace(5.0, 75.0, 15) if powers is None else np.asarray(powers, dtype=float)
    clean = pdc_signal(powers, gamma_max, scale)
    rng = stream(seed)
    return powers, clean * (1.0 + noise * rng.standard_normal(powers.size))


def run_gain_fit(powers, signals, true_gamma=None, true_scale=None) -> GainCurve:
    fit = fit_gain(powers, signals)
    model = pdc_signal(powers, fit.gamma_max, fit.scale, fit.p_max)
    return GainCurve(np.asarray(powers, float), np.asarray(signals, float), fit,
                     true_gamma, true_scale, model)

