"""Long-tail visual relationship toolkit: losses, RelMix, long-tail metrics."""

__version__ = "0.1.0"
