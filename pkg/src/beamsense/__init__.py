"""Sensing-capacity bounds for the Gaussian beam-pointing channel with
in-block memory and one-bit energy-detection feedback."""

__version__ = "0.1.0"

from .channel import BeamAction, ChannelConfig, StateVector  # noqa: E402
from .policy import PolicyTree  # noqa: E402

__all__ = ["BeamAction", "ChannelConfig", "PolicyTree", "StateVector", "__version__"]
