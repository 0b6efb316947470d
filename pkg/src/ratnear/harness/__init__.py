"""CLI harness: configuration, calibration manifest, experiment runners."""

from .config import ConfigField, load_config
from .calibration import CalibrationManifest, default_manifest_path

__all__ = ["CalibrationManifest", "ConfigField", "default_manifest_path", "load_config"]
