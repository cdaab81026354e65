"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -s`` to see the report lines.
Expected values come from closed forms or brute-force sums, never from the
code under test.
"""
import math
import time

import numpy as np
import pytest
from scipy import stats

from superbunch.chain import Detector, OpticalChain, detect, estimate_g2, simulate_records
from superbunch.distributions import Kind, PhotonDistribution, moments, pmf_table, sample
from superbunch.modes import ModeComposition, mean_photons_from_gain
from superbunch.rng import stream
from superbunch.scenarios import (ScanConfig, run_gain_fit, run_hbt, run_noise_histogram,
                                  run_scan, synthetic_gain_curve)

PULSES = 10**6
IDEAL = OpticalChain.build(noise_fwhm=0.0)


def report(criterion: int, label: str, ok: bool, detail: str) -> None:
    print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {label}: {detail}")
    assert ok, detail


@pytest.mark.parametrize("N", [1, 10, 100])
def test_1_superbunching_law(N):
    t0 = time.perf_counter()
    g2, se = estimate_g2(simulate_records(PhotonDistribution(Kind.SQUEEZED, N), IDEAL, PULSES,
                                          seed=100 + N))
    elapsed = time.perf_counter() - t0
    want = 3 + 1 / N
    ok = abs(g2 - want) < 3 * se and elapsed < 10.0
    report(1, f"squeezed N={N}", ok,
           f"g2={g2:.4f} +/- {se:.4f}, expected {want:.4f}, {elapsed:.2f} s")


def test_2_thermal_bunching():
    g2, se = estimate_g2(simulate_records(PhotonDistribution(Kind.THERMAL, 100), IDEAL, PULSES,
                                          seed=200))
    report(2, "thermal N=100", abs(g2 - 2.0) <= 0.02, f"g2={g2:.4f} +/- {se:.4f}, target 2.00 +/- 0.02")


@pytest.mark.parametrize("k", [1, 2, 5, 10])
def test_3_equal_mode_reduction(k):
    source = ModeComposition((1000.0 / k,) * k, Kind.THERMAL)
    g2, se = estimate_g2(simulate_records(source, IDEAL, PULSES, seed=300 + k))
    want = 1 + 1 / k
    report(3, f"{k} thermal modes", abs(g2 - want) < 3 * se,
           f"g2={g2:.4f} +/- {se:.4f}, expected {want:.4f}")


@pytest.mark.parametrize("kind, want", [(Kind.THERMAL, 1.8), (Kind.SQUEEZED, 2.6)])
def test_3_fractional_mode_count(kind, want):
    # N = 1e6 photons makes the 1/N term of the squeezed law negligible
    res = run_hbt(kind, 1e6, PULSES, seed=310, m=1.25)
    report(3, f"m=1.25 {kind.value}", abs(res.g2 - want) < 3 * res.std_error,
           f"g2={res.g2:.4f} +/- {res.std_error:.4f}, expected {want}")


def test_4_coherent_calibration():
    res = run_hbt(Kind.POISSON, 8000, PULSES, seed=400)
    report(4, "Poisson 8000 through noisy chain", abs(res.g2 - 1.0) <= 0.010,
           f"g2={res.g2:.5f} +/- {res.std_error:.5f}, target 1.000 +/- 0.010")


def test_5_gain_law():
    N = mean_photons_from_gain(15.8)
    report(5, "sinh^2(15.8)", abs(N / 1.3e13 - 1) < 0.05, f"N={N:.4e}, target 1.3e13 within 5%")


def test_5_gain_fit_round_trip():
    powers, signals = synthetic_gain_curve(seed=500)
    fit = run_gain_fit(powers, signals, 15.8, 1.0).fit
    report(5, "gain-fit round trip", abs(fit.gamma_max - 15.8) <= 0.3,
           f"Gamma_max={fit.gamma_max:.3f} +/- {fit.errors['gamma_max']:.3f}, target 15.8 +/- 0.3")


@pytest.mark.parametrize("config, want, tol", [
    (ScanConfig.angular(), 4.1, 0.3),
    (ScanConfig.spectral(), 0.22, 0.03),
], ids=["angular", "spectral"])
def test_6_scan_round_trip(config, want, tol):
    fit = run_scan(config, seed=600).fit
    ok = fit is not None and abs(fit.fwhm - want) <= tol
    detail = "no fit" if fit is None else f"fwhm={fit.fwhm:.4f} +/- {fit.errors['fwhm']:.4f}"
    report(6, f"{config.coordinate} scan", ok, f"{detail}, target {want} +/- {tol}")


@pytest.mark.parametrize("kind", [Kind.THERMAL, Kind.SQUEEZED])
@pytest.mark.parametrize("eta", [0.1, 0.5, 0.9])
def test_7_loss_invariance(kind, eta):
    dist = PhotonDistribution(kind, 200.0)
    ref = estimate_g2(simulate_records(dist, IDEAL, PULSES, seed=700))
    lossy = estimate_g2(simulate_records(dist, OpticalChain.build(eta=eta, noise_fwhm=0.0),
                                         PULSES, seed=701))
    combined = math.hypot(ref.std_error, lossy.std_error)
    report(7, f"{kind.value} eta={eta}", abs(lossy.g2 - ref.g2) < 3 * combined,
           f"lossless {ref.g2:.4f}, lossy {lossy.g2:.4f}, 3 SE = {3 * combined:.4f}")


def _pooled_chi_square(table, draws):
    support = np.flatnonzero(table > 0)
    observed = np.bincount(draws, minlength=table.size)[support]
    expected = table[support] / table.sum() * draws.size
    obs, exp = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(observed, expected):
        acc_o, acc_e = acc_o + o, acc_e + e
        if acc_e >= 5:
            obs.append(acc_o)
            exp.append(acc_e)
            acc_o = acc_e = 0.0
    obs[-1] += acc_o
    exp[-1] += acc_e
    return stats.chisquare(obs, exp).pvalue


@pytest.mark.parametrize("kind", [Kind.THERMAL, Kind.SQUEEZED, Kind.POISSON])
@pytest.mark.parametrize("mean", [1.0, 10.0, 100.0])
def test_8_sampler_chi_square(kind, mean):
    dist = PhotonDistribution(kind, mean)
    p = _pooled_chi_square(pmf_table(dist), sample(dist, stream(800, int(mean)), PULSES))
    report(8, f"chi-square {kind.value} mean={mean:g}", p > 1e-3, f"p={p:.4g}, threshold 1e-3")


@pytest.mark.parametrize("kind", [Kind.THERMAL, Kind.SQUEEZED, Kind.POISSON])
@pytest.mark.parametrize("mean", [0.5, 10.0, 100.0])
def test_8_moments_brute_force(kind, mean):
    dist = PhotonDistribution(kind, mean)
    table = pmf_table(dist)
    n = np.arange(table.size, dtype=float)
    mu = n @ table
    var = (n * n) @ table - mu * mu
    mo = moments(dist)
    worst = max(abs(mu / mo.mean - 1), abs(var / mo.variance - 1))
    report(8, f"moments {kind.value} mean={mean:g}", worst < 1e-8, f"max relative error {worst:.2e}")


def test_9_noise_histogram():
    h = run_noise_histogram(PULSES, Detector(), seed=900)
    report(9, "zero-photon noise FWHM", abs(h.fwhm() - 10.0) <= 0.3,
           f"FWHM={h.fwhm():.3f} nV s, target 10 +/- 0.3")


def test_9_photon_conversion():
    s = detect(np.array([8000]), Detector(noise_fwhm=0.0), stream(901))[0]
    report(9, "8000 photons noiseless", s == pytest.approx(70.0, rel=1e-15), f"signal={float(s)!r} nV s")
