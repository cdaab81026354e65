"""Parametric gain, detection geometry and multimode washout."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .distributions import Kind, PhotonDistribution, sample
from .fitting import FitError, levenberg_marquardt


def mean_photons_from_gain(gamma):
    """Photons per mode ``sinh(gamma)**2``; finite up to gamma ~ 350."""
    g = np.asarray(gamma, dtype=float)
    if np.any(g < 0):
        raise ValueError("gain must be non-negative")
    # expm1 keeps full relative precision at small gain
    s = 0.5 * (np.expm1(g) - np.expm1(-g))
    out = s * s
    return float(out) if out.ndim == 0 else out


def _log_sinh(z):
    z = np.asarray(z, dtype=float)
    big = z > 1.0
    zb = np.where(big, z, 1.0)
    zs = np.where(big, 1.0, z)
    return np.where(big, zb + np.log1p(-np.exp(-2.0 * zb)) - math.log(2.0), np.log(np.sinh(zs)))


def pdc_signal(powers, gamma_max: float, scale: float, p_max: float | None = None):
    """PDC signal ``scale * sinh^2(gamma_max * sqrt(P / p_max))``."""
    p = np.asarray(powers, dtype=float)
    p_max = float(p.max()) if p_max is None else p_max
    return scale * np.sinh(gamma_max * np.sqrt(p / p_max)) ** 2


@dataclass
class GainFit:
    gamma_max: float
    scale: float
    residual_norm: float
    errors: dict
    degenerate: bool
    p_max: float

    def as_dict(self) -> dict:
        return {"gamma_max": self.gamma_max, "scale": self.scale,
                "residual_norm": self.residual_norm, "errors": dict(self.errors),
                "degenerate": self.degenerate, "p_max": self.p_max}


#: below this gain sinh^2 is too close to its quadratic limit to separate A and gamma
LOW_GAIN_LIMIT = 0.5


def fit_gain(pump_powers, pdc_signals, max_iter: int = 200) -> GainFit:
    """Fit ``S(P) = A sinh^2(gamma_max sqrt(P/P_max))`` with P_max the largest power.

    Residuals are taken in log space, which matches multiplicative noise and
    keeps the many-decade dynamic range of high-gain data balanced. A coarse
    scan over gamma (with the optimal log A profiled out) seeds the LM step.
    """
    p = np.asarray(pump_powers, dtype=float)
    s = np.asarray(pdc_signals, dtype=float)
    if p.shape != s.shape or p.size < 5:
        raise ValueError("need at least 5 (power, signal) pairs")
    if np.any(p <= 0) or np.any(np.diff(p) <= 0):
        raise ValueError("pump powers must be positive and increasing")
    if np.any(s <= 0):
        raise ValueError("PDC signals must be positive")
    p_max = float(p[-1])
    x = np.sqrt(p / p_max)
    ls = np.log(s)

    grid = np.geomspace(1e-3, 60.0, 600)
    best_g, best_sse = grid[0], math.inf
    for g in grid:
        d = ls - 2.0 * _log_sinh(g * x)
        sse = float(np.sum((d - d.mean()) ** 2))
        if sse < best_sse:
            best_g, best_sse = g, sse
    log_a0 = float(np.mean(ls - 2.0 * _log_sinh(best_g * x)))

    def residual(q):
        return q[0] + 2.0 * _log_sinh(q[1] * x) - ls

    def jacobian(q):
        z = q[1] * x
        return np.column_stack([np.ones_like(x), 2.0 * x / np.tanh(z)])

    if best_g < LOW_GAIN_LIMIT:
        r = residual(np.array([log_a0, best_g]))
        return GainFit(float(best_g), float(math.exp(log_a0)), float(np.linalg.norm(r)),
                       {"gamma_max": math.inf, "scale": math.inf}, True, p_max)
    try:
        res = levenberg_marquardt(residual, jacobian, [log_a0, best_g], max_iter=max_iter)
    except FitError as exc:
        raise FitError(f"gain fit failed: {exc}", exc.params) from exc
    log_a, gamma = res.params
    dof = max(p.size - 2, 1)
    # unit weights: scale covariance by the residual variance
    cov = res.covariance * (res.chi2 / dof)
    err_g = math.sqrt(abs(cov[1, 1]))
    err_a = math.exp(log_a) * math.sqrt(abs(cov[0, 0]))
    degenerate = gamma < LOW_GAIN_LIMIT or not math.isfinite(res.condition) or res.condition > 1e12
    return GainFit(float(gamma), float(math.exp(log_a)), float(np.linalg.norm(res.residuals)),
                   {"gamma_max": err_g, "scale": err_a}, bool(degenerate), p_max)


@dataclass(frozen=True)
class ModeGeometry:
    """Coherence and detection extents of the measured light.

    Times in seconds, areas in m^2, velocity in m/s, angles in radians,
    bandwidths in nm.
    """

    coherence_time: float
    coherence_radius_sq: float
    detection_time: float
    detection_radius_sq: float
    phase_velocity: float
    detected_angle: float
    mode_angle_fwhm: float
    detected_bandwidth: float
    mode_bandwidth: float

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be positive")

    @property
    def coherence_volume(self) -> float:
        return self.phase_velocity * self.coherence_time * self.coherence_radius_sq

    @property
    def detection_volume(self) -> float:
        return self.phase_velocity * self.detection_time * self.detection_radius_sq

    @property
    def volume_ratio(self) -> float:
        return self.detection_volume / self.coherence_volume


def effective_mode_count(geometry: ModeGeometry) -> float:
    """Detected mode count from spectral and angular filter widths.

    Each dimension contributes ``max(1, detected / mode)`` (angle squared, as
    it spans an area), so a filter narrower than the mode still sees one mode.
    """
    spectral = max(1.0, geometry.detected_bandwidth / geometry.mode_bandwidth)
    angular = max(1.0, (geometry.detected_angle / geometry.mode_angle_fwhm) ** 2)
    return spectral * angular


def reduce_g2(single_mode_g2, m):
    """Measured g2 when ``m`` modes are detected: ``1 + (g2 - 1)/m``."""
    if np.any(np.asarray(m) < 1):
        raise ValueError("mode count m must be >= 1")
    if np.any(np.asarray(single_mode_g2) < 1):
        raise ValueError("single-mode g2 must be >= 1")
    return 1.0 + (single_mode_g2 - 1.0) / m


@dataclass(frozen=True)
class ModeComposition:
    per_mode_means: tuple[float, ...]
    kind: Kind = Kind.THERMAL

    def __post_init__(self):
        means = tuple(float(v) for v in self.per_mode_means)
        if not means or any(not (v > 0) for v in means):
            raise ValueError("per-mode means must be a non-empty list of positive numbers")
        object.__setattr__(self, "per_mode_means", means)
        object.__setattr__(self, "kind", Kind.parse(self.kind))

    @property
    def total_mean(self) -> float:
        return float(sum(self.per_mode_means))

    @property
    def effective_m(self) -> float:
        n = np.asarray(self.per_mode_means)
        return float(n.sum() ** 2 / np.sum(n * n))

    @property
    def fractions(self) -> np.ndarray:
        n = np.asarray(self.per_mode_means)
        return n / n.sum()

    def with_kind(self, kind, total_mean: float | None = None) -> "ModeComposition":
        total = self.total_mean if total_mean is None else total_mean
        return ModeComposition(tuple(self.fractions * total), kind)

    def sample(self, rng: np.random.Generator, pulses: int) -> np.ndarray:
        """Total photon number per pulse summed over independent modes (twin: per channel)."""
        out = None
        for mean in self.per_mode_means:
            n = sample(PhotonDistribution(self.kind, mean), rng, pulses)
            out = n if out is None else out + n
        return out


def compose_fractional_m(target_m: float, total_mean: float, kind=Kind.THERMAL) -> ModeComposition:
    """Modes whose effective number ``(sum N)^2 / sum N^2`` equals ``target_m``.

    Up to m = 2: two modes with mean ratio x, the smaller root of
    ``x^2 - 2x/(m-1) + 1 = 0``. Above 2: ceil(m) equal modes plus one larger
    remainder mode (dropped when m is an integer).
    """
    m = float(target_m)
    if not m >= 1:
        raise ValueError("target m must be >= 1")
    if not total_mean > 0:
        raise ValueError("total mean must be positive")
    if m == 1.0:
        weights = [1.0]
    elif m <= 2.0:
        q = 1.0 / (m - 1.0)
        x = 1.0 / (q + math.sqrt(q * q - 1.0))
        weights = [1.0, x]
    else:
        k = math.ceil(m)
        if k == m:
            weights = [1.0] * k
        else:
            # (m-1) y^2 - 2k y + k(m-k) = 0, positive root
            disc = 4.0 * k * k - 4.0 * (m - 1.0) * k * (m - k)
            y = (2.0 * k + math.sqrt(disc)) / (2.0 * (m - 1.0))
            weights = [1.0] * k + [y]
    w = np.asarray(weights)
    return ModeComposition(tuple(w / w.sum() * total_mean), kind)
