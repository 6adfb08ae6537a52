"""Deep fiducial inference: encoder-based inverse maps with approximate fiducial computation."""

__version__ = "0.1.0"

from .afc import AfcConfig, AfcEmptyError, FiducialSampleSet, afc_auto, afc_run, unconditional_samples
from .inference import EmpiricalGFD, confidence_curve, confidence_interval, coverage_study
from .models import BODModel, LaplaceModel, NonlinearModel, make_model
from .rng import RandomSource

__all__ = [
    "AfcConfig", "AfcEmptyError", "FiducialSampleSet", "afc_auto", "afc_run", "unconditional_samples",
    "EmpiricalGFD", "confidence_curve", "confidence_interval", "coverage_study",
    "BODModel", "LaplaceModel", "NonlinearModel", "make_model", "RandomSource",
]
