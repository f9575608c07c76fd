"""hybridcast: desk-scale hybrid time-series forecasting toolkit.

Data governance (augmentation, simulation, robust dataset weighting), a toy
probabilistic mixture-of-experts forecaster, model fusion and an evaluation
harness, exposed as a library and a CLI.
"""

__version__ = "0.1.0"

from .core import (CalendarFeatures, Frequency, NormStats, TimeSeries,
                   calendar_features, denormalize, ingest, normalize)

__all__ = [
    "__version__", "TimeSeries", "Frequency", "CalendarFeatures", "NormStats",
    "ingest", "normalize", "denormalize", "calendar_features",
]
