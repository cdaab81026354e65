"""Weighted least squares by Levenberg-Marquardt, and the Gaussian peak fit.

Damping schedule: start at ``lam0 = 1e-3``; an accepted step divides the
damping by 10, a rejected one multiplies it by 10. The damped normal equations
scale the diagonal, ``(J^T J + lam * diag(J^T J)) dp = J^T r``. Iteration stops
when the relative parameter step falls below ``xtol`` or the relative drop in
chi-square falls below ``ftol``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

FOUR_LN2 = 4.0 * math.log(2.0)


class FitError(RuntimeError):
    """Fit did not converge; ``params`` holds the last iterate."""

    def __init__(self, message: str, params: np.ndarray | None = None):
        super().__init__(message)
        self.params = params


class DegenerateFitError(FitError):
    """Curvature matrix is singular before any fitting can start."""


@dataclass
class LMResult:
    params: np.ndarray
    covariance: np.ndarray
    chi2: float
    residuals: np.ndarray
    iterations: int
    condition: float


def levenberg_marquardt(
    residual: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], np.ndarray],
    p0: Sequence[float],
    max_iter: int = 500,
    xtol: float = 1e-12,
    ftol: float = 1e-15,
    lam0: float = 1e-3,
) -> LMResult:
    """Minimise ``sum(residual(p)**2)``. Residuals must already be weighted."""
    p = np.asarray(p0, dtype=float).copy()
    r = residual(p)
    chi2 = float(r @ r)
    lam = lam0
    for it in range(1, max_iter + 1):
        J = jacobian(p)
        A = J.T @ J
        g = J.T @ r
        diag = np.diag(A).copy()
        diag[diag == 0] = 1.0
        while True:
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                if lam > 1e16:
                    raise FitError("damped normal equations singular", p)
                continue
            trial = p + step
            r_new = residual(trial)
            chi2_new = float(r_new @ r_new)
            if np.isfinite(chi2_new) and chi2_new <= chi2:
                break
            lam *= 10.0
            if lam > 1e16:
                # no downhill step exists: at a minimum to machine precision
                return _finish(p, r, J, chi2, it)
        small_step = np.all(np.abs(step) <= xtol * (np.abs(p) + xtol))
        small_drop = chi2 - chi2_new <= ftol * chi2
        p, r, chi2 = trial, r_new, chi2_new
        lam = max(lam / 10.0, 1e-12)
        if small_step or small_drop or chi2 == 0.0:
            return _finish(p, r, jacobian(p), chi2, it)
    raise FitError(f"no convergence after {max_iter} iterations", p)


def _finish(p, r, J, chi2, it) -> LMResult:
    A = J.T @ J
    s = np.linalg.svd(A, compute_uv=False)
    cond = float(s[0] / s[-1]) if s[-1] > 0 else math.inf
    cov = np.linalg.pinv(A, rcond=1e-14, hermitian=True)
    if not math.isfinite(cond) or cond > 1e14:
        cov = cov.copy()
        # directions with no curvature get infinite variance
        null = np.abs(np.diag(A)) <= 1e-14 * max(s[0], 1e-300)
        cov[null, :] = np.inf
        cov[:, null] = np.inf
    return LMResult(p, cov, chi2, r, it, cond)


def gaussian(x, baseline, amplitude, center, fwhm):
    """``baseline + amplitude * exp(-4 ln2 (x - center)^2 / fwhm^2)``."""
    x = np.asarray(x, dtype=float)
    return baseline + amplitude * np.exp(-FOUR_LN2 * (x - center) ** 2 / fwhm**2)


@dataclass
class GaussianFit:
    baseline: float
    amplitude: float
    center: float
    fwhm: float
    errors: dict[str, float]
    chi2: float
    dof: int
    degenerate: tuple[str, ...] = ()
    covariance: np.ndarray = field(default=None, repr=False)

    @property
    def peak(self) -> float:
        return self.baseline + self.amplitude

    def as_dict(self) -> dict:
        return {
            "baseline": self.baseline, "amplitude": self.amplitude,
            "center": self.center, "fwhm": self.fwhm,
            "errors": dict(self.errors), "chi2": self.chi2, "dof": self.dof,
            "degenerate": list(self.degenerate),
        }


def _initial_guess(x, y):
    order = np.argsort(x)
    x, y = x[order], y[order]
    k = max(1, len(x) // 5)
    base = float(np.median(np.concatenate([y[:k], y[-k:]])))
    hi, lo = int(np.argmax(y)), int(np.argmin(y))
    i = hi if abs(y[hi] - base) >= abs(y[lo] - base) else lo
    amp = float(y[i] - base)
    above = x[np.abs(y - base) >= 0.5 * abs(amp)]
    width = float(above.max() - above.min()) if above.size > 1 else 0.0
    span = float(x[-1] - x[0])
    if width <= 0:
        width = span / 4.0
    return np.array([base, amp, float(x[i]), width])


def fit_gaussian(points, p0: Sequence[float] | None = None, max_iter: int = 500) -> GaussianFit:
    """Weighted fit of ``gaussian`` to ``(x, y, sigma)`` points.

    Parameter errors come from the inverse curvature matrix. When the peak is
    not significant (|amplitude| < 2 sigma) centre and width are flagged as
    degenerate and their errors set to infinity; the same holds when LM fails
    to converge on data with no significant peak. Any other non-convergence
    raises :class:`FitError`.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 5:
        raise ValueError("need at least 5 (x, y, sigma) points")
    x, y, s = pts.T
    if np.any(s <= 0) or not np.all(np.isfinite(pts)):
        raise ValueError("sigmas must be positive and all values finite")
    if np.unique(x).size < 4:
        raise DegenerateFitError("fewer than four distinct abscissae")
    w = 1.0 / s

    def residual(p):
        return (gaussian(x, *p) - y) * w

    def jacobian(p):
        b, a, c, f = p
        e = np.exp(-FOUR_LN2 * (x - c) ** 2 / f**2)
        d = x - c
        J = np.column_stack([
            np.ones_like(x),
            e,
            a * e * 2.0 * FOUR_LN2 * d / f**2,
            a * e * 2.0 * FOUR_LN2 * d**2 / f**3,
        ])
        return J * w[:, None]

    start = _initial_guess(x, y) if p0 is None else np.asarray(p0, dtype=float)
    try:
        res = levenberg_marquardt(residual, jacobian, start, max_iter=max_iter)
    except FitError as exc:
        flat = _flat_fit(x, y, w, start, exc.params)
        if flat is None:
            raise
        return flat
    b, a, c, f = res.params
    f = abs(f)
    dof = max(len(x) - 4, 1)
    cov = res.covariance
    errs = np.sqrt(np.where(np.isfinite(np.diag(cov)), np.abs(np.diag(cov)), np.inf))
    names = ("baseline", "amplitude", "center", "fwhm")
    errors = dict(zip(names, map(float, errs)))
    degenerate = tuple(n for n in names if not math.isfinite(errors[n]))
    if not abs(a) >= 2.0 * errors["amplitude"]:
        degenerate = tuple(dict.fromkeys(degenerate + ("center", "fwhm")))
        errors["center"] = errors["fwhm"] = math.inf
    return GaussianFit(float(b), float(a), float(c), float(f), errors, res.chi2, dof,
                       degenerate, cov)


def _flat_fit(x, y, w, start, last) -> GaussianFit | None:
    """Fallback when LM wanders because the peak is not in the data.

    Returns a baseline-only result (centre and width unidentified) if the
    last Gaussian iterate improves chi-square over a constant by less than 9,
    otherwise None.
    """
    w2 = w * w
    base = float(np.sum(w2 * y) / np.sum(w2))
    chi2_flat = float(np.sum(w2 * (y - base) ** 2))
    if last is not None and np.all(np.isfinite(last)):
        r = (gaussian(x, *last) - y) * w
        if chi2_flat - float(r @ r) >= 9.0:
            return None
    # linear amplitude with centre and width frozen at the initial guess
    shape = np.exp(-FOUR_LN2 * (x - start[2]) ** 2 / start[3] ** 2)
    A = np.column_stack([np.ones_like(x), shape]) * w[:, None]
    coef, *_ = np.linalg.lstsq(A, y * w, rcond=None)
    cov = np.linalg.pinv(A.T @ A)
    errors = {"baseline": float(np.sqrt(cov[0, 0])), "amplitude": float(np.sqrt(cov[1, 1])),
              "center": math.inf, "fwhm": math.inf}
    return GaussianFit(float(coef[0]), float(coef[1]), float(start[2]), float(abs(start[3])),
                       errors, chi2_flat, max(len(x) - 4, 1), ("center", "fwhm"), None)
