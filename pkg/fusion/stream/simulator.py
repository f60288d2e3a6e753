"""
Simulated agent fleet: renders sensor packets from a synthetic scene and
emits them as wire messages in timestamp order.
"""

import heapq
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from ..correspondence import SyntheticDescriptorProvider, write_descriptor_sidecar
from ..semantics import write_label_table
from ..splatmap.export import to_uint8
from ..splatmap.frames import PAYLOAD_DEPTH, DataFrame
from ..splatmap.renderer import Camera, render
from .protocol import Bye, FrameMessage, Hello, encode
from .recordings import RecordingPaths, RecordingWriter, write_truth

logger = logging.getLogger(__name__)

DEPTH_ALPHA_MIN = 0.5

_HELLO_ORDER, _FRAME_ORDER, _BYE_ORDER = 0, 1, 2


@dataclass
class BandwidthMeter:
    """Bytes sent per agent, split by payload kind."""
    rgb: Dict[int, int] = field(default_factory=lambda: defaultdict(int))
    geometry: Dict[int, int] = field(default_factory=lambda: defaultdict(int))
    semantic: Dict[int, int] = field(default_factory=lambda: defaultdict(int))
    total: Dict[int, int] = field(default_factory=lambda: defaultdict(int))

    def count(self, msg, size):
        agent = msg.agent_id
        self.total[agent] += size
        if isinstance(msg, FrameMessage):
            self.rgb[agent] += msg.rgb.nbytes
            if msg.depth is not None:
                self.geometry[agent] += 4 * msg.depth.size
            else:
                self.geometry[agent] += 15 * len(msg.points)
            if msg.semantic is not None:
                self.semantic[agent] += 4 * msg.semantic.size

    def mbps(self, agent_id, seconds):
        def rate(counter):
            return 8.0 * counter.get(agent_id, 0) / max(seconds, 1e-9) / 1e6
        return {
            'rgb': rate(self.rgb), 'geometry': rate(self.geometry),
            'semantic': rate(self.semantic), 'total': rate(self.total),
        }


def sensor_frame(scene, agent, seq, rng=None):
    """
    The packet ``agent`` captures at ``seq``: the ground truth rendered at the
    global pose, with pose, depth and points expressed in the agent's frame.
    """
    pose_global = agent.global_pose(seq)
    intr = agent.intrinsics
    camera = Camera.from_pose(intr, pose_global)
    cfg = scene.config
    result = render(scene.gaussians, camera, dominant=cfg.semantic)
    rgb = to_uint8(np.clip(agent.appearance.apply(result.rgb), 0.0, 1.0))
    covered = result.alpha > DEPTH_ALPHA_MIN
    scale = agent.transform.scale

    depth = points = colors = semantic = None
    if agent.payload == PAYLOAD_DEPTH:
        depth = np.where(covered, result.depth / scale, 0.0).astype(np.float32)
    else:
        v, u = np.nonzero(covered)
        if rng is not None and len(v) > cfg.max_points:
            keep = np.sort(rng.choice(len(v), cfg.max_points, replace=False))
            v, u = v[keep], u[keep]
        world = pose_global.apply(intr.unproject(u, v, result.depth[v, u]))
        points = agent.transform.inverse().apply(world).astype(np.float32)
        colors = rgb[v, u]
    if cfg.semantic and scene.semantic_dim:
        ids = np.where(result.dominant >= 0, scene.object_ids[np.maximum(result.dominant, 0)], 0)
        semantic = scene.semantic_table()[ids].astype(np.float32)
    return DataFrame(agent.agent_id, seq, agent.timestamp_ns(seq), agent.local_pose(seq), intr,
                     rgb, depth, points, colors, semantic)


def _agent_messages(scene, agent):
    """(timestamp, order, agent, seq, message) tuples of one agent, in time order."""
    rng = np.random.default_rng([scene.seed, 0x517, agent.agent_id])
    start = agent.timestamp_ns(0)
    yield start, _HELLO_ORDER, agent.agent_id, -1, Hello(agent.agent_id, agent.profile(scene.semantic_dim))
    last = start
    for seq in range(agent.frames):
        frame = sensor_frame(scene, agent, seq, rng)
        last = frame.timestamp_ns
        yield last, _FRAME_ORDER, agent.agent_id, seq, FrameMessage.from_frame(frame)
    yield last, _BYE_ORDER, agent.agent_id, agent.frames, Bye(agent.agent_id)


def scene_messages(scene):
    """All messages of the fleet merged by timestamp; yields (timestamp_ns, message)."""
    streams = [_agent_messages(scene, a) for a in sorted(scene.agents.values(), key=lambda a: a.agent_id)]
    for timestamp, _, _, _, msg in heapq.merge(*streams, key=lambda item: item[:4]):
        yield timestamp, msg


@dataclass
class SimulationResult:
    messages: int = 0
    frames: int = 0
    bytes: int = 0
    seconds: float = 0.0
    bandwidth: BandwidthMeter = field(default_factory=BandwidthMeter)

    def agent_mbps(self, agent_id):
        return self.bandwidth.mbps(agent_id, self.seconds)


def simulate(scene, sink):
    """
    Emit the fleet's messages into ``sink`` (a callable taking a message)
    and return a SimulationResult whose ``frames`` is the emitted frame count.
    """
    result = SimulationResult(seconds=scene.config.seconds)
    for _, msg in scene_messages(scene):
        size = sink(msg)
        if not isinstance(size, int):
            size = len(encode(msg))
        result.messages += 1
        result.bytes += size
        result.bandwidth.count(msg, size)
        if isinstance(msg, FrameMessage):
            result.frames += 1
    for agent_id in sorted(scene.agents):
        rates = result.agent_mbps(agent_id)
        logger.info('agent %s: %.2f Mbps (rgb %.2f, geometry %.2f, semantic %.2f)', agent_id,
                    rates['total'], rates['rgb'], rates['geometry'], rates['semantic'])
    return result


def scene_descriptors(scene, dim=64):
    provider = SyntheticDescriptorProvider(scene.global_pose, dim=dim, seed=scene.seed)
    for agent in sorted(scene.agents.values(), key=lambda a: a.agent_id):
        for seq in range(agent.frames):
            yield provider.describe(agent.agent_id, seq)


def record_scene(scene, base, descriptor_dim=64):
    """
    Write ``<base>.hamr`` with the fleet's messages plus the descriptor
    sidecar, the label table and the ground-truth document.
    """
    paths = RecordingPaths.of(base)
    with RecordingWriter(paths.stream) as writer:
        result = simulate(scene, writer)
    write_descriptor_sidecar(paths.descriptors, scene_descriptors(scene, descriptor_dim), descriptor_dim)
    if scene.semantic_dim:
        write_label_table(paths.labels, scene.labels)
    write_truth(paths.truth, scene.truth_document())
    logger.info('recorded %d messages (%d frames, %d bytes) to %s',
                result.messages, result.frames, result.bytes, paths.stream)
    return result
