"""
Transport-independent fusion core: agent sessions, correspondence rounds,
alignment jobs and the ingestion queue in front of the mapper.

The network server and the lock-step pipeline both drive one FusionCore.
Everything here is synchronous; alignment jobs are split into a start,
a ``run`` that touches only snapshots (safe on a worker thread) and a
finish that applies the result.
"""

import dataclasses
import logging
import threading
import time
from collections import defaultdict, deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..alignment import Aligner, AgentSession, AgentState, SyntheticSfmBackend, promote
from ..conf import FusionConfig
from ..correspondence import (
    SimilarityCache, SyntheticDescriptorProvider, SyntheticFeatureProvider, ThresholdStore,
    best_verified, propose_candidates, provider_from_config, raise_threshold,
)
from ..exceptions import InsufficientData
from ..geometry import Sim3Transform
from ..splatmap.mapper import SplatMapper
from .evaluation import is_holdout
from .protocol import Aligned, Bye, FrameMessage, Hello

logger = logging.getLogger(__name__)
stats_logger = logging.getLogger('fusion.stream.stats')

LANDMARKS = 600


@dataclass(eq=False)
class AlignmentJob:
    candidate: object
    anchor: AgentSession
    agent: AgentSession
    frames_i: list
    frames_j: list
    aligner: Aligner
    report: Optional[object] = None

    def run(self):
        """Runs the attempt on the snapshots; None when a window cannot be filled."""
        try:
            self.report = self.aligner.attempt(self.candidate, self.anchor, self.agent,
                                               self.frames_i, self.frames_j)
        except InsufficientData as exc:
            logger.debug('alignment of agent %s postponed: %s', self.agent.agent_id, exc)
            self.report = None
        return self.report


class FusionCore:

    def __init__(self, config=None, descriptors=None, features=None, backend=None, seed=0):
        self.config = config or FusionConfig()
        self.descriptors = descriptors
        self.features = features
        self.aligner = Aligner(backend, self.config.solver, self.config.alignment) if backend else None
        self.mapper = SplatMapper(self.config, seed)
        self.sessions = {}
        self.closed = set()
        self.origin_id = None
        self.thresholds = ThresholdStore(self.config.correspondence.initial_gamma)
        self.similarities = SimilarityCache()
        self._place = defaultdict(dict)
        self._queue = defaultdict(deque)
        self._lock = threading.RLock()
        self.queue_dropped = defaultdict(int)
        self.outbox = defaultdict(list)
        self.reports = []
        self.rounds = 0
        self.discarded = 0
        self.deferred = 0
        self.frames_received = 0
        self._last_round_s = None
        self._active_job = None
        self._started = time.monotonic()
        self._stat_mark = (self._started, 0)

    # sessions

    def handle(self, msg):
        if isinstance(msg, Hello):
            return self.hello(msg)
        if isinstance(msg, FrameMessage):
            return self.frame(msg)
        if isinstance(msg, Bye):
            return self.bye(msg)
        logger.warning('ignoring %s message from agent %s', type(msg).__name__, msg.agent_id)
        return None

    def hello(self, msg):
        with self._lock:
            session = self.sessions.get(msg.agent_id)
            if session is not None:
                logger.warning('agent %s said hello twice, keeping its session', msg.agent_id)
                return session
            cap = self.config.alignment.cache_cap
            if msg.profile.metric and self.origin_id is None:
                session = AgentSession.origin(msg.agent_id, msg.profile, cache_cap=cap)
                self.origin_id = msg.agent_id
                logger.info('agent %s is the metric origin', msg.agent_id)
            else:
                if msg.profile.metric:
                    logger.warning('agent %s claims metric poses but agent %s is the origin',
                                   msg.agent_id, self.origin_id)
                session = AgentSession(msg.agent_id, msg.profile, cache_cap=cap)
                logger.info('agent %s connected (%s payload), unaligned', msg.agent_id, msg.profile.payload)
            self.sessions[msg.agent_id] = session
            self.closed.discard(msg.agent_id)
        # outside the core lock: an optimiser step may hold the mapper's
        if session.is_origin:
            self.mapper.register_agent(msg.agent_id, Sim3Transform.identity(), is_origin=True,
                                       metric_depth=msg.profile.metric_depth)
        return session

    def bye(self, msg):
        with self._lock:
            session = self.sessions.get(msg.agent_id)
            if session is None:
                logger.warning('bye from unknown agent %s', msg.agent_id)
                return None
            self.closed.add(msg.agent_id)
            logger.info('agent %s closed its stream after %d frames (%s)', msg.agent_id,
                        session.frames_received, session.state.value)
            return session

    def frame(self, msg):
        """Route one frame to the cache or the ingestion queue; False when discarded."""
        with self._lock:
            session = self.sessions.get(msg.agent_id)
            if session is None:
                self.discarded += 1
                logger.warning('discarding frame %s of unknown agent %s', msg.seq, msg.agent_id)
                return False
            frame = msg.to_frame(session.profile.intrinsics)
            self.frames_received += 1
            if self.descriptors is not None:
                desc = self.descriptors(frame)
                if desc is not None:
                    self._place[frame.agent_id][frame.seq] = desc
            trainable = not is_holdout(frame.seq, self.config.pool.holdout_every)
            session.record(frame, trainable)
            if session.is_aligned and trainable:
                self._enqueue(frame, bounded=True)
            return True

    # ingestion queue

    def _enqueue(self, frame, bounded=True):
        queue = self._queue[frame.agent_id]
        cap = self.config.pool.queue_cap
        while bounded and cap and len(queue) >= cap:
            dropped = queue.popleft()
            self.queue_dropped[frame.agent_id] += 1
            logger.debug('ingest queue of agent %s full, dropped frame %s', frame.agent_id, dropped.seq)
        queue.append(frame)

    def pending(self):
        with self._lock:
            return sum(len(q) for q in self._queue.values())

    def _pop_frames(self, limit=None):
        with self._lock:
            frames = []
            while any(self._queue.values()) and (limit is None or len(frames) < limit):
                for agent_id in sorted(self._queue):
                    if self._queue[agent_id] and (limit is None or len(frames) < limit):
                        frames.append(self._queue[agent_id].popleft())
            return frames

    def drain_ingest(self, limit=None):
        """Ingest queued frames into the map; returns how many were ingested."""
        frames = self._pop_frames(limit)
        for frame in frames:
            self.mapper.ingest(frame)
        return len(frames)

    def optimize(self, steps=1):
        losses = None
        for _ in range(steps):
            losses = self.mapper.step() or losses
        return losses

    # correspondence and alignment

    def _descriptors_of(self, sessions):
        out = []
        for session in sessions:
            seqs = {f.seq for f in session.history}
            out.extend(d for seq, d in sorted(self._place[session.agent_id].items()) if seq in seqs)
        return out

    def _frame_lookup(self, frame_id):
        session = self.sessions[frame_id[0]]
        return next((f for f in session.history if f.seq == frame_id[1]), None)

    def _features(self, frame_id):
        frame = self._frame_lookup(frame_id)
        return self.features(frame)

    def correspondence_round(self):
        """
        Propose and verify candidates for every unaligned agent. Returns the
        first verified candidate or None. Rounds that verify nothing raise
        the pair thresholds.
        """
        with self._lock:
            self.rounds += 1
            aligned = [s for s in self.sessions.values() if s.is_aligned]
            waiting = [s for s in self.sessions.values() if s.state is AgentState.UNALIGNED]
            if not aligned or not waiting:
                return None
            aligned_descs = self._descriptors_of(aligned)
            cc = self.config.correspondence
            for session in sorted(waiting, key=lambda s: s.agent_id):
                proposals = propose_candidates(self._descriptors_of([session]), aligned_descs,
                                               self.thresholds, self.similarities)
                fresh = [c for c in proposals if (c.frame_i, c.frame_j) not in session.tried]
                if not fresh:
                    continue
                if self.features is None:
                    verified = dataclasses.replace(fresh[0], match_ratio=1.0, verified=True)
                    checked = [verified]
                else:
                    verified, checked = best_verified(fresh, self._features, cc.xi, cc.ratio_test,
                                                      limit=cc.max_verifications)
                session.tried.update((c.frame_i, c.frame_j) for c in checked)
                if verified is not None:
                    logger.info('candidate %s <-> %s verified (similarity %.3f, match ratio %.2f)',
                                verified.frame_i, verified.frame_j, verified.place_similarity,
                                verified.match_ratio)
                    return verified
                by_pair = defaultdict(list)
                for c in fresh:
                    by_pair[c.pair].append(c.place_similarity)
                for pair, sims in by_pair.items():
                    raise_threshold(pair, sims, self.thresholds)
            return None

    def start_alignment(self, candidate):
        with self._lock:
            if self._active_job is not None or self.aligner is None:
                return None
            anchor = self.sessions[candidate.frame_i[0]]
            agent = self.sessions[candidate.frame_j[0]]
            if agent.state is not AgentState.UNALIGNED:
                return None
            agent.begin()
            job = AlignmentJob(candidate, anchor, agent, anchor.snapshot(), agent.snapshot(), self.aligner)
            self._active_job = job
            return job

    def finish_alignment(self, job):
        """Apply a finished job; the accepted transform goes to the agent's outbox."""
        report = job.report
        if report is not None and report.accepted and not job.agent.is_aligned:
            # registering twice keeps the first model, so this may run ahead of promote
            self.mapper.register_agent(job.agent.agent_id, report.transform,
                                       metric_depth=job.agent.profile.metric_depth)
        with self._lock:
            self._active_job = None
            report = job.report
            session = job.agent
            if report is None:
                # deferred, not tried: the candidate stays eligible for later rounds
                session.abort()
                session.tried.discard((job.candidate.frame_i, job.candidate.frame_j))
                self.deferred += 1
                return None
            self.reports.append(report)
            if report.accepted and not session.is_aligned:
                promote(session, report, sink=lambda f: self._enqueue(f, bounded=False))
                self.outbox[session.agent_id].append(Aligned(session.agent_id, report.transform))
            else:
                promote(session, report)
            return report

    def assume_aligned(self, agent_id, transform):
        """Put an agent straight into Aligned with a known ``transform``."""
        with self._lock:
            session = self.sessions[agent_id]
            if session.is_aligned:
                return session
            self.mapper.register_agent(agent_id, transform, metric_depth=session.profile.metric_depth)
            session.local_to_global = transform
            session.state = AgentState.ALIGNED
            for frame in session.drain():
                self._enqueue(frame, bounded=False)
            return session

    def next_alignment(self):
        candidate = self.correspondence_round()
        return self.start_alignment(candidate) if candidate is not None else None

    def try_align(self):
        """Correspondence round plus alignment, all on the calling thread."""
        job = self.next_alignment()
        if job is None:
            return None
        job.run()
        return self.finish_alignment(job)

    def due(self, now_s):
        """Whether a correspondence round is due at ``now_s`` seconds."""
        cadence = self.config.correspondence.cadence_s
        if self._last_round_s is not None and now_s - self._last_round_s < cadence:
            return False
        self._last_round_s = now_s
        return True

    def tick(self, now_s):
        return self.try_align() if self.due(now_s) else None

    def take_outbox(self, agent_id):
        with self._lock:
            return self.outbox.pop(agent_id, [])

    # reporting

    @property
    def aligned_count(self):
        return sum(s.is_aligned for s in self.sessions.values())

    def stats(self, now=None):
        now = time.monotonic() if now is None else now
        mark_t, mark_frames = self._stat_mark
        fps = (self.frames_received - mark_frames) / max(now - mark_t, 1e-9)
        self._stat_mark = (now, self.frames_received)
        return {
            't': now - self._started, 'agents': len(self.sessions), 'aligned': self.aligned_count,
            'gaussians': len(self.mapper.map), 'pool': len(self.mapper.pool), 'fps': fps,
            'states': {a: s.state.value for a, s in sorted(self.sessions.items())},
            'dropped': dict(self.queue_dropped),
        }

    def stats_line(self, now=None):
        s = self.stats(now)
        line = 'STAT t={t:.1f} agents={agents} aligned={aligned} gaussians={gaussians} pool={pool} fps={fps:.1f}'
        line = line.format(**s)
        stats_logger.info(line)
        return line


def synthetic_providers(scene, config=None, seed=0, sfm=None):
    """
    Descriptor provider, local feature provider and SfM backend fed by the
    scene's ground-truth poses.
    """
    config = config or FusionConfig()
    cc = config.correspondence
    if cc.provider == 'file':
        descriptors = provider_from_config(cc)
    else:
        descriptors = SyntheticDescriptorProvider(scene.global_pose, dim=cc.descriptor_dim, seed=scene.seed)
    rng = np.random.default_rng([seed, 0x1A2D])
    means = scene.gaussians.means
    landmarks = means[rng.choice(len(means), min(LANDMARKS, len(means)), replace=False)]
    features = SyntheticFeatureProvider(landmarks, scene.global_pose, scene.intrinsics, seed=scene.seed)
    backend = sfm or SyntheticSfmBackend.from_config(config.alignment, scene.global_pose)
    return descriptors, features, backend


def core_for_scene(scene, config=None, seed=0, sfm=None):
    config = config or FusionConfig()
    descriptors, features, backend = synthetic_providers(scene, config, seed, sfm)
    return FusionCore(config, descriptors, features, backend, seed)
