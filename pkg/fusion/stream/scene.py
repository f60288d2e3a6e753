"""
Synthetic desk-scale scenes with ground truth.

A scene is a set of ground-truth Gaussians (a desk top, a back wall and a
number of labelled objects standing on the desk) and one script per agent:
a smooth camera trajectory around the desk, the agent's ground-truth
local-to-global transform, its start delay, frame rate and payload kind.
Agent 0 is the metric origin whose local frame is the global frame.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict

import numpy as np
from scipy.interpolate import CubicSpline

from ..conf import SimulatorConfig
from ..exceptions import SceneError
from ..geometry import Rotation3, SE3Pose, Sim3Transform, apply_to_pose
from ..splatmap.frames import DeviceProfile, Intrinsics
from ..splatmap.gaussians import GaussianMap
from ..splatmap.pool import AffineColor
from ..splatmap.renderer import Camera, project

logger = logging.getLogger(__name__)

MIN_IN_VIEW = 0.8
LOOK_TARGET = np.array([0.0, 0.1, 0.1])


def look_at(position, target, up=(0.0, 0.0, 1.0)):
    """Camera-to-world rotation of an OpenCV camera at ``position`` facing ``target``."""
    forward = np.asarray(target, dtype=np.float64) - np.asarray(position, dtype=np.float64)
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, up)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    return Rotation3.from_matrix(np.stack([right, down, forward], axis=1))


@dataclass(frozen=True, eq=False)
class AgentScript:
    agent_id: int
    transform: Sim3Transform
    start_s: float
    rate_hz: float
    frames: int
    payload: str
    metric: bool
    intrinsics: Intrinsics
    positions: CubicSpline
    targets: CubicSpline
    appearance: AffineColor = field(default_factory=AffineColor)

    def profile(self, semantic_dim=0):
        return DeviceProfile(self.intrinsics, self.payload, self.metric, False, semantic_dim)

    def time_of(self, seq):
        return seq / self.rate_hz

    def timestamp_ns(self, seq):
        return int(round((self.start_s + self.time_of(seq)) * 1e9))

    def global_pose(self, seq):
        t = self.time_of(seq)
        position = self.positions(t)
        return SE3Pose(look_at(position, self.targets(t)), position)

    def local_pose(self, seq):
        return apply_to_pose(self.transform.inverse(), self.global_pose(seq))


class SyntheticScene:

    def __init__(self, config, gaussians, object_ids, agents, labels, semantic_dim):
        self.config = config
        self.gaussians = gaussians
        self.object_ids = object_ids
        self.agents: Dict[int, AgentScript] = {a.agent_id: a for a in agents}
        self.labels = labels
        self.semantic_dim = semantic_dim

    @property
    def seed(self):
        return self.config.seed

    @property
    def origin_id(self):
        return next(a.agent_id for a in self.agents.values() if a.metric)

    def label_vector(self, object_id):
        if object_id <= 0:
            return np.zeros(self.semantic_dim)
        return self.labels[label_name(object_id)]

    def semantic_table(self):
        """Row k is the embedding of object id k; row 0 (background) is zero."""
        table = np.zeros((self.config.objects + 1, self.semantic_dim))
        for k in range(1, self.config.objects + 1):
            table[k] = self.labels[label_name(k)]
        return table

    def object_box(self, object_id):
        mask = self.object_ids == object_id
        means = self.gaussians.means[mask]
        pad = 2.0 * self.gaussians.sigma[mask, None]
        return (means - pad).min(axis=0), (means + pad).max(axis=0)

    def global_pose(self, agent_id, seq):
        agent = self.agents.get(agent_id)
        if agent is None or not 0 <= seq < agent.frames:
            return None
        return agent.global_pose(seq)

    def transform(self, agent_id):
        return self.agents[agent_id].transform

    def intrinsics(self, agent_id):
        agent = self.agents.get(agent_id)
        return agent.intrinsics if agent else None

    def duration_s(self):
        return max(a.start_s + a.frames / a.rate_hz for a in self.agents.values())

    def validate(self):
        """Every trajectory must keep the scene in view for most of its frames."""
        for agent in self.agents.values():
            seen = sum(self._in_view(agent, seq) for seq in range(agent.frames))
            if seen < MIN_IN_VIEW * agent.frames:
                raise SceneError(f'agent {agent.agent_id} sees the scene in {seen}/{agent.frames} frames')
        for k in range(1, self.config.objects + 1):
            if not np.any(self.object_ids == k):
                raise SceneError(f'object {k} has no gaussians')
        return self

    def _in_view(self, agent, seq):
        intr = agent.intrinsics
        proj = project(self.gaussians.means, self.gaussians.sigma,
                       Camera.from_pose(intr, agent.global_pose(seq)))
        inside = proj.visible & (proj.u >= 0) & (proj.u < intr.width) & (proj.v >= 0) & (proj.v < intr.height)
        return inside.mean() >= 0.05

    def truth_document(self):
        cfg = self.config
        return {
            'seed': cfg.seed,
            'simulator': {
                'agents': cfg.agents, 'width': cfg.width, 'height': cfg.height, 'rate_hz': cfg.rate_hz,
                'seconds': cfg.seconds, 'stagger_s': cfg.stagger_s, 'gaussians': cfg.gaussians,
                'objects': cfg.objects, 'payloads': list(cfg.payloads), 'semantic': cfg.semantic,
                'scale_range': list(cfg.scale_range), 'isp_strength': cfg.isp_strength,
                'max_points': cfg.max_points,
            },
            'semantic_dim': self.semantic_dim,
            'origin': self.origin_id,
            'transforms': {str(a): s.transform.to_array().tolist() for a, s in self.agents.items()},
            'object_boxes': {
                label_name(k): [v.tolist() for v in self.object_box(k)] for k in range(1, cfg.objects + 1)
            },
        }

    @classmethod
    def from_truth(cls, doc):
        sim = dict(doc['simulator'])
        sim['payloads'] = tuple(sim['payloads'])
        sim['scale_range'] = tuple(sim['scale_range'])
        return build_scene(SimulatorConfig(seed=doc['seed'], **sim), doc['semantic_dim'])


def label_name(object_id):
    return f'object_{object_id:02d}'


def _sample_objects(rng, count):
    centres = []
    attempts = 0
    while len(centres) < count:
        attempts += 1
        if attempts > 10_000:
            raise SceneError(f'cannot place {count} objects on the desk')
        c = rng.uniform([-0.65, -0.45], [0.65, 0.45])
        if all(np.linalg.norm(c - o) > 0.2 for o in centres):
            centres.append(c)
    return centres


def _build_gaussians(config, rng):
    n = config.gaussians
    n_obj = int(0.4 * n) if config.objects else 0
    n_desk = int(0.35 * n)
    n_wall = n - n_obj - n_desk

    desk = np.column_stack([rng.uniform(-0.9, 0.9, n_desk), rng.uniform(-0.6, 0.6, n_desk), np.zeros(n_desk)])
    checker = (np.floor(desk[:, 0] / 0.15) + np.floor(desk[:, 1] / 0.15)) % 2
    desk_color = np.array([0.55, 0.38, 0.22]) + 0.12 * checker[:, None] + rng.normal(0, 0.02, (n_desk, 3))

    wall = np.column_stack([rng.uniform(-1.2, 1.2, n_wall), np.full(n_wall, 0.9), rng.uniform(0.0, 1.2, n_wall)])
    band = (np.floor(wall[:, 2] / 0.2) % 2)[:, None]
    wall_color = np.array([0.72, 0.74, 0.70]) - 0.25 * band * np.array([1.0, 0.6, 0.2])

    means = [desk, wall]
    colors = [desk_color, wall_color]
    sigma = [np.full(n_desk, 0.035), np.full(n_wall, 0.05)]
    ids = [np.zeros(n_desk, dtype=np.int64), np.zeros(n_wall, dtype=np.int64)]
    if config.objects:
        per = np.full(config.objects, n_obj // config.objects)
        per[: n_obj % config.objects] += 1
        for k, (centre, count) in enumerate(zip(_sample_objects(rng, config.objects), per), start=1):
            radius = rng.uniform(0.04, 0.07)
            height = rng.uniform(0.08, 0.2)
            pts = np.column_stack([
                centre[0] + rng.uniform(-radius, radius, count),
                centre[1] + rng.uniform(-radius, radius, count),
                rng.uniform(0.0, height, count),
            ])
            hue = rng.uniform(0.1, 0.95, 3)
            hue[k % 3] = 0.05
            means.append(pts)
            colors.append(np.tile(hue, (count, 1)) + rng.normal(0, 0.02, (count, 3)))
            sigma.append(np.full(count, 0.02))
            ids.append(np.full(count, k, dtype=np.int64))

    means = np.concatenate(means)
    gmap = GaussianMap.from_values(
        means, np.concatenate(sigma), np.full(len(means), 0.9),
        np.clip(np.concatenate(colors), 0.02, 0.98),
    )
    return gmap, np.concatenate(ids)


def _trajectory(config, rng, index):
    """Splines of camera centre and look-at target over the agent's run time."""
    duration = config.seconds
    knots = np.linspace(0.0, duration, max(4, int(np.ceil(duration)) + 1))
    spread = np.radians(25.0) * (index - (config.agents - 1) / 2.0)
    base = np.radians(-90.0) + spread
    phase = rng.uniform(0.0, 2.0 * np.pi)
    azimuth = base + np.radians(35.0) * np.sin(2.0 * np.pi * knots / max(duration, 1.0) + phase)
    radius = 1.25 + 0.08 * np.cos(3.0 * knots / max(duration, 1.0) + phase) + rng.normal(0, 0.01, len(knots))
    height = 0.6 + 0.08 * np.sin(knots + phase) + rng.normal(0, 0.01, len(knots))
    positions = np.column_stack([radius * np.cos(azimuth), radius * np.sin(azimuth), height])
    targets = LOOK_TARGET + rng.normal(0, 0.04, (len(knots), 3))
    return CubicSpline(knots, positions, axis=0), CubicSpline(knots, targets, axis=0)


def build_scene(config=None, semantic_dim=16):
    config = config or SimulatorConfig()
    rng = np.random.default_rng([config.seed, 0x5CE7E])
    gaussians, ids = _build_gaussians(config, rng)

    label_rng = np.random.default_rng([config.seed, 0x1ABE1])
    labels = {}
    for k in range(1, config.objects + 1):
        v = label_rng.normal(size=semantic_dim)
        labels[label_name(k)] = v / np.linalg.norm(v)

    width, height = config.width, config.height
    focal = 0.8 * width
    intr = Intrinsics(focal, focal, (width - 1) / 2.0, (height - 1) / 2.0, width, height)
    frames = int(round(config.seconds * config.rate_hz))
    agents = []
    for index in range(config.agents):
        agent_rng = np.random.default_rng([config.seed, 0xA6E, index])
        if index == 0:
            transform = Sim3Transform.identity()
            appearance = AffineColor()
        else:
            transform = Sim3Transform.random(agent_rng, config.scale_range)
            appearance = AffineColor(
                np.eye(3) + np.diag(config.isp_strength * agent_rng.uniform(-1, 1, 3)),
                0.3 * config.isp_strength * agent_rng.uniform(-1, 1, 3),
            )
        positions, targets = _trajectory(config, agent_rng, index)
        agents.append(AgentScript(
            index, transform, index * config.stagger_s, config.rate_hz, frames,
            config.payloads[index % len(config.payloads)], index == 0, intr, positions, targets, appearance,
        ))
    scene = SyntheticScene(config, gaussians, ids, agents, labels, semantic_dim if config.semantic else 0)
    logger.debug('built scene seed=%s with %d gaussians and %d agents', config.seed, len(gaussians), len(agents))
    return scene.validate()
