"""Hierarchical packet attention-convolution intrusion detection.

Raw packets are cut into fixed-size byte segments, embedded by a two-level
conv + attention network, trained with focal loss and probed with FGSM/PGD
attacks in embedding space.
"""

from .errors import HPACError

__version__ = "0.1.0"

__all__ = ["HPACError", "__version__"]
