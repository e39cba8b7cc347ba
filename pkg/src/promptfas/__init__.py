"""promptfas: composite text prompts + circulant cross-modal fusion for
domain-generalized face anti-spoofing, with a leave-one-domain-out harness
on seeded synthetic data."""

__version__ = "0.1.0"

from .autodiff import Tape, Tensor  # noqa: F401
