"""Shipped experiment presets (INI files next to this module)."""

from __future__ import annotations

from importlib import resources

from .config import ExperimentConfig, parse_config

PRESETS = {
    "light": "light.ini",
    "heavy_a1": "heavy_a1.ini",
    "heavy_a23": "heavy_a23.ini",
    "smoke": "smoke.ini",
}
HEADLINE = ("light", "heavy_a1", "heavy_a23")


def preset_text(name: str) -> str:
    try:
        fname = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return resources.files(__package__).joinpath("presets", fname).read_text()


def load_preset(name: str) -> ExperimentConfig:
    return parse_config(preset_text(name))
