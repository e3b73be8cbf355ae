"""paintflow: oil-painting stylization, dataset synthesis, toy diffusion, and interactive editing."""

__version__ = "0.1.0"
