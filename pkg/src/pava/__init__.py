"""Privacy-aware first-person video activity classification.

Mask-based redaction of sensitive objects plus an ensemble of recurrent
video classifiers, with balanced training, fine-tuning on redacted video,
and metric reporting. Heavyweight dependencies (torch) are imported only
by the modules that need them.
"""

from .labels import FPV_O_CLASSES, ActivityLabel, LabelSpace

__version__ = "0.1.0"

__all__ = ["FPV_O_CLASSES", "ActivityLabel", "LabelSpace", "__version__"]
