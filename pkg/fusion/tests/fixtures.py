"""
Small scenes, frames and pose sets shared by the test modules.
"""

import numpy as np

from fusion.conf import FusionConfig, SimulatorConfig
from fusion.geometry import PosePairSet, Rotation3, SE3Pose, Sim3Transform, apply_to_pose
from fusion.splatmap.frames import DataFrame, DeviceProfile, Intrinsics
from fusion.splatmap.gaussians import GaussianMap
from fusion.stream.scene import build_scene, look_at


def intrinsics(width=16, height=16):
    focal = 0.8 * width
    return Intrinsics(focal, focal, (width - 1) / 2.0, (height - 1) / 2.0, width, height)


def profile(payload='depth', metric=False, semantic_dim=0, width=16, height=16):
    return DeviceProfile(intrinsics(width, height), payload, metric, False, semantic_dim)


def camera_pose(position=(0.0, -2.0, 0.3), target=(0.0, 0.0, 0.0)):
    return SE3Pose(look_at(position, target), position)


def five_gaussians(seed=0):
    """Five Gaussians in front of ``camera_pose()`` that overlap on a 16x16 image."""
    rng = np.random.default_rng(seed)
    means = np.column_stack([rng.uniform(-0.25, 0.25, 5), rng.uniform(-0.3, 0.3, 5), rng.uniform(-0.2, 0.2, 5)])
    return GaussianMap.from_values(
        means, rng.uniform(0.12, 0.2, 5), rng.uniform(0.4, 0.8, 5), rng.uniform(0.2, 0.8, (5, 3)),
    )


def depth_frame(agent_id=0, seq=0, pose=None, rgb=None, depth=None, width=16, height=16, timestamp_ns=None):
    intr = intrinsics(width, height)
    rgb = np.full((height, width, 3), 128, dtype=np.uint8) if rgb is None else rgb
    depth = np.full((height, width), 3.0, dtype=np.float32) if depth is None else depth
    return DataFrame(agent_id, seq, seq * 100_000_000 if timestamp_ns is None else timestamp_ns,
                     pose or camera_pose(), intr, rgb, depth)


def trajectory(count=16, seed=0, radius=1.0):
    """Camera poses on a noisy arc with varied viewing directions."""
    rng = np.random.default_rng(seed)
    poses = []
    for k in range(count):
        angle = -np.pi / 2 + 0.9 * (k / max(count - 1, 1) - 0.5)
        position = np.array([radius * np.cos(angle), radius * np.sin(angle), 0.4 + 0.05 * np.sin(k)])
        position += rng.normal(scale=0.02, size=3)
        poses.append(SE3Pose(look_at(position, rng.normal(scale=0.05, size=3)), position))
    return poses


def pose_pairs(transform, count=16, seed=0, sigma_t=0.0, sigma_r_deg=0.0):
    """Sources on a trajectory and targets = transform(sources) plus noise."""
    rng = np.random.default_rng([seed, 7])
    sources = trajectory(count, seed)
    targets = []
    for pose in sources:
        mapped = apply_to_pose(transform, pose)
        noise = Rotation3.from_rotvec(rng.normal(scale=np.radians(sigma_r_deg), size=3)) if sigma_r_deg else Rotation3()
        targets.append(SE3Pose(noise * mapped.rotation, mapped.translation + rng.normal(scale=sigma_t, size=3)))
    return PosePairSet(sources, targets)


def small_simulator(**changes):
    values = dict(seed=3, agents=3, width=24, height=24, rate_hz=5.0, seconds=8.0, stagger_s=1.0,
                  gaussians=600, objects=4)
    values.update(changes)
    return SimulatorConfig(**values)


def small_scene(**changes):
    return build_scene(small_simulator(**changes), semantic_dim=8)


def small_config(**sections):
    config = FusionConfig()
    config = config.with_section('semantics', dim=8, table_size=2 ** 12, hidden=16)
    config = config.with_section('pool', spawn_per_frame=128, holdout_every=5)
    config = config.with_section('alignment', window=8)
    config = config.with_section('correspondence', cadence_s=0.5)
    for name, changes in sections.items():
        config = config.with_section(name, **changes)
    return config


def random_sim3(seed):
    return Sim3Transform.random(np.random.default_rng(seed))
