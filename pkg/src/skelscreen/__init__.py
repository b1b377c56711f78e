"""Bone localization, labeling and rule-based abnormality screening for whole-body micro-CT volumes."""
from .errors import SkelError
from .volume import VoxelVolume, load_volume, save_volume

__version__ = "0.1.0"
__all__ = ["SkelError", "VoxelVolume", "load_volume", "save_volume", "__version__"]
