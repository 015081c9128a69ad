"""Image-prompt multi-view diffusion and score-distilled 3D field optimization."""

__version__ = "0.1.0"
