"""Classic and GAN-based data augmentation for small lesion-ROI datasets."""

__version__ = "0.1.0"
