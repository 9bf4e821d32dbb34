"""Single-pixel computational imaging with two-step-trained reconstruction networks."""

__version__ = "0.1.0"
