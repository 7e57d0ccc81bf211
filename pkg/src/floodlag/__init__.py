"""Flood exposure mapping and conditional quasi-Poisson distributed-lag models."""
from .kernels import BACKEND

__version__ = "0.1.0"
