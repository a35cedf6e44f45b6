"""Arbitrary-masked selective state-space reconstruction for undersampled MRI and sparse-view CT."""

from .net import ModelParams, NetConfig, init_model, mambamir_forward

__version__ = "0.1.0"

__all__ = ["ModelParams", "NetConfig", "init_model", "mambamir_forward", "__version__"]
