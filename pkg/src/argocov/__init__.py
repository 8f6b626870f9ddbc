"""Bivariate nonstationary Gaussian-process models for ocean temperature and salinity profiles."""

__version__ = "0.1.0"

from .core import GeoPoint, Observation, ProfileDataset, chordal_distance, squared_distance_h  # noqa: E402
from .errors import ArgoCovError  # noqa: E402
from .models import MODELS, CovarianceModel, ParamVector  # noqa: E402

__all__ = ["__version__", "GeoPoint", "Observation", "ProfileDataset", "chordal_distance",
           "squared_distance_h", "ArgoCovError", "MODELS", "CovarianceModel", "ParamVector"]
