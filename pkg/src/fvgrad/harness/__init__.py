from .config import ExperimentConfig, load_config, parse_config
from .twin import TwinSpec

__all__ = ["ExperimentConfig", "load_config", "parse_config", "TwinSpec"]
