"""Image quality transfer toolkit for low-field MRI."""

__version__ = "0.1.0"

from .nifti import load_volume, save_volume
from .volume import MembershipMaps, Volume

__all__ = ["MembershipMaps", "Volume", "__version__", "load_volume", "save_volume"]
