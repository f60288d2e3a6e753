from .frames import DataFrame, DeviceProfile, Intrinsics
from .gaussians import Gaussian, GaussianMap, prune, spawn_from_frame
from .pool import AffineColor, PoolEntry, TrainingPool
from .renderer import Camera, render, render_backward

__all__ = [
    'AffineColor', 'Camera', 'DataFrame', 'DeviceProfile', 'Gaussian', 'GaussianMap', 'Intrinsics',
    'PoolEntry', 'TrainingPool', 'prune', 'render', 'render_backward', 'spawn_from_frame',
]
