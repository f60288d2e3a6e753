"""
Sensor packets and device descriptions shared by ingestion, alignment and
mapping.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..geometry import SE3Pose

PAYLOAD_DEPTH = 'depth'
PAYLOAD_POINTS = 'points'
PAYLOAD_KINDS = (PAYLOAD_DEPTH, PAYLOAD_POINTS)


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixels; pixel (u, v) = (column, row)."""
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0 or self.width <= 0 or self.height <= 0:
            raise ValueError(f'intrinsics must be positive: {self}')

    @property
    def shape(self):
        return (self.height, self.width)

    @property
    def pixel_count(self):
        return self.width * self.height

    def unproject(self, u, v, depth):
        """Camera-frame points of pixels (u, v) at z-depth ``depth``."""
        x = (np.asarray(u, dtype=np.float64) - self.cx) / self.fx * depth
        y = (np.asarray(v, dtype=np.float64) - self.cy) / self.fy * depth
        return np.stack([x, y, np.asarray(depth, dtype=np.float64)], axis=-1)


@dataclass(frozen=True)
class DeviceProfile:
    intrinsics: Intrinsics
    payload: str = PAYLOAD_DEPTH
    metric: bool = False
    metric_depth: bool = False
    semantic_dim: int = 0

    def __post_init__(self):
        if self.payload not in PAYLOAD_KINDS:
            raise ValueError(f'unknown payload kind {self.payload!r}')


@dataclass(eq=False)
class DataFrame:
    """
    One timestamped sensor packet: local SLAM pose, intrinsics, colour image
    and exactly one geometric payload (depth image or local-frame points).
    """
    agent_id: int
    seq: int
    timestamp_ns: int
    pose: SE3Pose
    intrinsics: Intrinsics
    rgb: np.ndarray
    depth: Optional[np.ndarray] = None
    points: Optional[np.ndarray] = None
    point_colors: Optional[np.ndarray] = None
    semantic: Optional[np.ndarray] = None
    sample_count: int = 0

    def __post_init__(self):
        if (self.depth is None) == (self.points is None):
            raise ValueError('a frame carries exactly one of depth or points')
        if self.rgb.shape[:2] != self.intrinsics.shape:
            raise ValueError(
                f'rgb shape {self.rgb.shape[:2]} does not match intrinsics {self.intrinsics.shape}'
            )
        if self.points is not None and self.point_colors is None:
            self.point_colors = np.zeros(self.points.shape, dtype=np.uint8)

    @property
    def frame_id(self):
        return (self.agent_id, self.seq)

    @property
    def payload(self):
        return PAYLOAD_DEPTH if self.depth is not None else PAYLOAD_POINTS

    def rgb_float(self):
        if self.rgb.dtype == np.uint8:
            return self.rgb.astype(np.float64) / 255.0
        return np.asarray(self.rgb, dtype=np.float64)

    def __repr__(self):
        return f'DataFrame(agent={self.agent_id}, seq={self.seq}, payload={self.payload})'
