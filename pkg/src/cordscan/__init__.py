"""Spinal cord diffusion MRI toolkit.

Fits DTI and Ball-and-Stick microstructure models voxel-wise, aggregates
metrics per cervical vertebral level through a weighted white-matter atlas,
and runs the group analysis (Welch tests, level pooling, LDA + repeated-split
ROC AUC) on real or synthetic data.
"""

__version__ = "0.1.0"

from cordscan.errors import CordscanError

__all__ = ["CordscanError", "__version__"]
