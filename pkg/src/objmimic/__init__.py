"""Object-aware retargeting of human manipulation demos onto a humanoid."""

__version__ = "0.1.0"
