from .commands import cmd_bridge, cmd_fk_validate, cmd_front, cmd_report, cmd_simulate
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .presets import HEADLINE, PRESETS, load_preset

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "HEADLINE",
    "PRESETS",
    "cmd_bridge",
    "cmd_fk_validate",
    "cmd_front",
    "cmd_report",
    "cmd_simulate",
    "load_config",
    "load_preset",
    "parse_config",
]
