"""
One-time alignment of an agent's local SLAM frame to the global map frame.

An attempt takes a verified correspondence between an aligned agent ``i``
and an unaligned agent ``j``, picks a temporal window of frames around it
from both agents, poses those images with a localized SfM backend and runs
two absolute-orientation solves:

    T_{j->s}: j's SLAM poses  -> SfM poses
    T_{s->g}: i's SfM poses   -> i's global poses

whose composition is j's local-to-global transform. The attempt is accepted
when both stages fit within the translation and rotation gates.
"""

import datetime
import enum
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .conf import AlignmentConfig, SolverConfig
from .exceptions import DegenerateInput, InsufficientData, SfmFailed
from .geometry import (
    PosePairSet, Rotation3, SE3Pose, Sim3Transform, apply_to_pose, compose,
    solve_absolute_orientation,
)

logger = logging.getLogger(__name__)
reports_logger = logging.getLogger('fusion.alignment.reports')

REASON_SFM_FAILED = 'sfm_failed'
REASON_TRANSLATION_GATE = 'translation_gate'
REASON_ROTATION_GATE = 'rotation_gate'
REASON_SCALE_UNDETERMINED = 'scale_undetermined'
REASON_DEGENERATE = 'degenerate'


class AgentState(enum.Enum):
    UNALIGNED = 'unaligned'
    ALIGNING = 'aligning'
    ALIGNED = 'aligned'


@dataclass(eq=False)
class AgentSession:
    """
    Server-side state of one agent. ``history`` keeps recent frames for
    alignment windows whatever the state; ``cache`` holds the frames of an
    unaligned agent that still wait for the map.
    """
    agent_id: int
    profile: object
    state: AgentState = AgentState.UNALIGNED
    local_to_global: Optional[Sim3Transform] = None
    cache_cap: int = 10_000
    cache: deque = field(default_factory=deque)
    history: deque = field(default_factory=deque)
    tried: set = field(default_factory=set)
    cache_dropped: int = 0
    frames_received: int = 0
    is_origin: bool = False

    def __post_init__(self):
        if (self.state is AgentState.ALIGNED) != (self.local_to_global is not None):
            raise ValueError('an aligned session needs a transform and only an aligned one has it')

    @classmethod
    def origin(cls, agent_id, profile, cache_cap=10_000):
        return cls(agent_id, profile, AgentState.ALIGNED, Sim3Transform.identity(),
                   cache_cap=cache_cap, is_origin=True)

    @property
    def is_aligned(self):
        return self.state is AgentState.ALIGNED

    def record(self, frame, trainable=True):
        """
        Remember ``frame`` for alignment windows. Returns True when the frame
        went to the cache, False when it may go straight to the map. Frames
        that are not ``trainable`` (held out) stay in ``history`` only.
        """
        self.frames_received += 1
        self.history.append(frame)
        while len(self.history) > self.cache_cap:
            self.history.popleft()
        if self.is_aligned or not trainable:
            return False
        self.cache.append(frame)
        while len(self.cache) > self.cache_cap:
            self.cache.popleft()
            self.cache_dropped += 1
        return True

    def begin(self):
        if self.state is not AgentState.UNALIGNED:
            raise ValueError(f'agent {self.agent_id} cannot start aligning from {self.state.value}')
        self.state = AgentState.ALIGNING

    def abort(self):
        if self.state is AgentState.ALIGNING:
            self.state = AgentState.UNALIGNED

    def drain(self):
        frames = sorted(self.cache, key=lambda f: (f.timestamp_ns, f.seq))
        self.cache.clear()
        return frames

    def global_pose(self, frame):
        return apply_to_pose(self.local_to_global, frame.pose)

    def snapshot(self):
        """Frames of ``history`` as a list, for use outside the ingest task."""
        return list(self.history)


@dataclass(frozen=True, eq=False)
class SfmResult:
    frame_ids: Tuple[Tuple[int, int], ...]
    poses: Tuple[Optional[SE3Pose], ...]

    @property
    def success(self):
        return bool(self.poses) and all(p is not None for p in self.poses)

    def split(self, count):
        return self.poses[:count], self.poses[count:]


class SyntheticSfmBackend:
    """
    Stands in for localized SfM: each image gets its ground-truth global pose
    re-expressed in a freshly drawn random Sim(3) gauge, with optional
    Gaussian pose noise, per-image dropout and an injected translation bias
    (in map meters) for corruption experiments.
    """

    def __init__(self, pose_of, sigma_t=0.0, sigma_r_deg=0.0, p_drop=0.0, seed=0,
                 scale_range=(0.5, 2.0), bias=None):
        self.pose_of = pose_of
        self.sigma_t = sigma_t
        self.sigma_r_deg = sigma_r_deg
        self.p_drop = p_drop
        self.seed = seed
        self.scale_range = scale_range
        self.bias = bias
        self.calls = 0
        self.last_gauge = None

    @classmethod
    def from_config(cls, config: AlignmentConfig, pose_of):
        return cls(pose_of, config.sfm_sigma_t, config.sfm_sigma_r_deg, config.sfm_p_drop, config.sfm_seed)

    def run(self, frames):
        rng = np.random.default_rng([self.seed, self.calls])
        self.calls += 1
        gauge = Sim3Transform.random(rng, self.scale_range)
        self.last_gauge = gauge
        poses = []
        for index, frame in enumerate(frames):
            truth = self.pose_of(frame.agent_id, frame.seq)
            rot_noise = rng.normal(scale=np.radians(self.sigma_r_deg), size=3)
            t_noise = rng.normal(scale=self.sigma_t, size=3)
            dropped = rng.uniform() < self.p_drop
            if truth is None or dropped:
                poses.append(None)
                continue
            translation = truth.translation + t_noise
            if self.bias is not None:
                translation = translation + self.bias(index, frame)
            perturbed = SE3Pose(Rotation3.from_rotvec(rot_noise) * truth.rotation, translation)
            poses.append(apply_to_pose(gauge, perturbed))
        return SfmResult(tuple(f.frame_id for f in frames), tuple(poses))


def run_localized_sfm(frames, backend):
    result = backend.run(frames)
    if not result.success:
        missing = sum(p is None for p in result.poses)
        raise SfmFailed(f'localized SfM left {missing} of {len(result.poses)} images unposed')
    return result


def select_windows(candidate, cache_i, cache_j, window):
    """
    ``window`` consecutive frames per agent centred on the correspondence
    frame, shifted inwards at the cache edges.
    """
    return (
        _window(list(cache_i), candidate.frame_i, window),
        _window(list(cache_j), candidate.frame_j, window),
    )


def _window(frames, frame_id, window):
    if len(frames) < window:
        raise InsufficientData(f'agent {frame_id[0]} has {len(frames)} cached frames, window needs {window}')
    seqs = [f.seq for f in frames]
    try:
        index = seqs.index(frame_id[1])
    except ValueError:
        raise InsufficientData(f'frame {frame_id} is no longer cached') from None
    start = min(max(index - window // 2, 0), len(frames) - window)
    return frames[start:start + window]


@dataclass(frozen=True, eq=False)
class AlignmentReport:
    agent_id: int
    anchor_id: int
    transform: Optional[Sim3Transform]
    stage_translation: Tuple[float, float] = (float('nan'), float('nan'))
    stage_rotation: Tuple[float, float] = (float('nan'), float('nan'))
    accepted: bool = False
    reason: str = ''
    gate_translation_m: float = 0.1
    gate_rotation_deg: float = 10.0
    frame_i: Optional[Tuple[int, int]] = None
    frame_j: Optional[Tuple[int, int]] = None
    created: datetime.datetime = field(default_factory=lambda: datetime.datetime.now(datetime.timezone.utc))

    def __post_init__(self):
        if self.accepted and not (
            self.translation_rmse <= self.gate_translation_m and self.rotation_rmse <= self.gate_rotation_deg
        ):
            raise ValueError(f'report for agent {self.agent_id} accepted outside the gates')

    @property
    def translation_rmse(self):
        return max(self.stage_translation)

    @property
    def rotation_rmse(self):
        return max(self.stage_rotation)

    @classmethod
    def rejected(cls, agent_id, anchor_id, reason, candidate=None, **kwargs):
        return cls(agent_id, anchor_id, None, accepted=False, reason=reason,
                   frame_i=candidate.frame_i if candidate else None,
                   frame_j=candidate.frame_j if candidate else None, **kwargs)

    def as_log_line(self):
        t1, t2 = self.stage_translation
        r1, r2 = self.stage_rotation
        return (
            f'ALIGN ts={self.created.isoformat()} agent={self.agent_id} anchor={self.anchor_id} '
            f't1={t1:.6f} r1={r1:.4f} t2={t2:.6f} r2={r2:.4f} '
            f'accepted={int(self.accepted)} reason={self.reason or "none"}'
        )


def register(frames_j, sfm_j, frames_i, sfm_i, global_poses_i, solver: SolverConfig = None,
             agent_id=None, anchor_id=None, candidate=None):
    solver = solver or SolverConfig()
    agent_id = frames_j[0].agent_id if agent_id is None else agent_id
    anchor_id = frames_i[0].agent_id if anchor_id is None else anchor_id
    gates = dict(gate_translation_m=solver.gate_translation_m, gate_rotation_deg=solver.gate_rotation_deg)
    try:
        to_sfm = solve_absolute_orientation(
            PosePairSet([f.pose for f in frames_j], list(sfm_j)),
            solver.epsilon, max_iterations=solver.max_iterations,
        )
        to_global = solve_absolute_orientation(
            PosePairSet(list(sfm_i), list(global_poses_i)),
            solver.epsilon, max_iterations=solver.max_iterations,
        )
    except DegenerateInput as exc:
        logger.info('alignment of agent %s against %s degenerate: %s', agent_id, anchor_id, exc)
        return AlignmentReport.rejected(agent_id, anchor_id, REASON_DEGENERATE, candidate, **gates)

    # stage one residuals are in SfM units; express them in map meters
    stage_t = (to_sfm.translation_rmse * to_global.transform.scale, to_global.translation_rmse)
    stage_r = (to_sfm.rotation_rmse, to_global.rotation_rmse)
    transform = compose(to_global.transform, to_sfm.transform)
    reason = ''
    if to_sfm.scale_undetermined or to_global.scale_undetermined:
        reason = REASON_SCALE_UNDETERMINED
    elif max(stage_t) > solver.gate_translation_m:
        reason = REASON_TRANSLATION_GATE
    elif max(stage_r) > solver.gate_rotation_deg:
        reason = REASON_ROTATION_GATE
    return AlignmentReport(
        agent_id, anchor_id, transform, stage_t, stage_r, accepted=not reason, reason=reason,
        frame_i=candidate.frame_i if candidate else None,
        frame_j=candidate.frame_j if candidate else None, **gates,
    )


def promote(session, report, sink=None):
    """
    Apply ``report`` to ``session``. An accepted report aligns the agent and
    flushes its cache to ``sink`` in timestamp order; a rejected one sends it
    back to Unaligned with the cache intact. Already aligned agents ignore
    further reports.
    """
    if session.is_aligned:
        logger.info('agent %s is already aligned, ignoring report from anchor %s',
                    session.agent_id, report.anchor_id)
        return session
    if not report.accepted:
        session.state = AgentState.UNALIGNED
        return session
    session.local_to_global = report.transform
    session.state = AgentState.ALIGNED
    flushed = session.drain()
    logger.info('agent %s aligned (scale %.4f), flushing %d cached frames',
                session.agent_id, report.transform.scale, len(flushed))
    if sink is not None:
        for frame in flushed:
            sink(frame)
    return session


class Aligner:
    """Runs one alignment attempt end to end and logs its report."""

    def __init__(self, backend, solver: SolverConfig = None, alignment: AlignmentConfig = None):
        self.backend = backend
        self.solver = solver or SolverConfig()
        self.alignment = alignment or AlignmentConfig()

    def attempt(self, candidate, anchor, agent, frames_i=None, frames_j=None):
        """
        ``frames_i``/``frames_j`` are snapshots of the two histories; they are
        taken from the sessions when omitted. Raises InsufficientData when a
        window cannot be filled yet.
        """
        frames_i = anchor.snapshot() if frames_i is None else frames_i
        frames_j = agent.snapshot() if frames_j is None else frames_j
        window_i, window_j = select_windows(candidate, frames_i, frames_j, self.alignment.window)
        try:
            sfm = run_localized_sfm(window_j + window_i, self.backend)
        except SfmFailed as exc:
            logger.info('alignment of agent %s aborted: %s', agent.agent_id, exc)
            report = AlignmentReport.rejected(
                agent.agent_id, anchor.agent_id, REASON_SFM_FAILED, candidate,
                gate_translation_m=self.solver.gate_translation_m,
                gate_rotation_deg=self.solver.gate_rotation_deg,
            )
        else:
            sfm_j, sfm_i = sfm.split(len(window_j))
            report = register(
                window_j, sfm_j, window_i, sfm_i, [anchor.global_pose(f) for f in window_i],
                self.solver, agent.agent_id, anchor.agent_id, candidate,
            )
        reports_logger.info(report.as_log_line())
        return report
