"""Toy cross-attention text-rendering denoiser trained by alternate optimization
over attention-derived character masks."""

__version__ = "0.1.0"
