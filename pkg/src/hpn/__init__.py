"""Prototype hierarchies over graph nodes for class-incremental learning."""
from .model import HpnModel, ModelConfig, TrainConfig

__version__ = "0.1.0"
__all__ = ["HpnModel", "ModelConfig", "TrainConfig", "__version__"]
