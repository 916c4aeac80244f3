"""3D rigid registration: classical estimators and a learned correspondence network."""

__version__ = "0.1.0"
