"""Photon statistics of bright squeezed vacuum from high-gain parametric down-conversion."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "0.1.0"

from .chain import (Beamsplitter, Detector, Loss, OpticalChain, PulseRecords,
                    UndefinedEstimatorError, apply_loss, detect, estimate_g2, split)
from .distributions import (ContinuumRegimeError, Kind, PhotonDistribution, moments,
                            normally_ordered_g2, pmf, sample)
from .fitting import DegenerateFitError, FitError, fit_gaussian
from .modes import (ModeComposition, ModeGeometry, compose_fractional_m, effective_mode_count,
                    fit_gain, mean_photons_from_gain, reduce_g2)
