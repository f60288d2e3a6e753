"""
Lock-step runner: feeds a message sequence (live simulation or recording)
through fusion cores without a network, so runs are reproducible and the
evaluation modes can be compared on the same data.

Modes:
  fusion       normal operation, agents aligned by the core
  oracle       every agent registered with its ground-truth transform, pose
               and correction learning disabled
  individuals  one oracle map per agent, each evaluated on every agent's
               held-out views
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from ..conf import FusionConfig
from .core import FusionCore, core_for_scene
from .evaluation import AgentMetrics, EvaluationTable, evaluate
from .protocol import FrameMessage, Hello

logger = logging.getLogger(__name__)

MODE_FUSION = 'fusion'
MODE_ORACLE = 'oracle'
MODE_INDIVIDUALS = 'individuals'
MODES = (MODE_FUSION, MODE_ORACLE, MODE_INDIVIDUALS)


@dataclass
class PipelineResult:
    mode: str
    snapshots: Dict[int, object]
    table: EvaluationTable
    history: Dict[int, float] = field(default_factory=dict)
    reports: List[object] = field(default_factory=list)
    frames: int = 0
    wall_s: float = 0.0
    timing: Dict[str, float] = field(default_factory=dict)

    @property
    def snapshot(self):
        """The fused map (the only one outside the individuals mode)."""
        return next(iter(self.snapshots.values()))

    @property
    def final_psnr(self):
        return self.table.mean_psnr

    @property
    def final_depth_l1(self):
        return self.table.mean_depth_l1


def oracle_config(config):
    return config.with_section('optimizer', lr_pose_rotation=0.0, lr_pose_translation=0.0, lr_correction=0.0)


class LockstepRunner:
    """
    Drives cores message by message. After every frame: a correspondence
    tick on the frame's timestamp (fusion mode), ingestion of everything
    queued and ``steps_per_frame`` optimiser steps per core.
    """

    def __init__(self, scene, config=None, mode=MODE_FUSION, seed=0, eval_every_frames=0, sfm=None):
        if mode not in MODES:
            raise ValueError(f'unknown pipeline mode {mode!r}, expected one of {MODES}')
        self.scene = scene
        self.mode = mode
        self.seed = seed
        self.config = config or FusionConfig()
        if mode != MODE_FUSION:
            self.config = oracle_config(self.config)
        self.eval_every_frames = eval_every_frames
        self.truth = {a: s.transform for a, s in scene.agents.items()}
        self.cores: Dict[int, FusionCore] = {}
        if mode == MODE_INDIVIDUALS:
            for agent_id in sorted(scene.agents):
                self.cores[agent_id] = FusionCore(self.config, seed=seed)
        else:
            self.cores[0] = core_for_scene(scene, self.config, seed, sfm)
        self.frames = 0
        self.history = {}

    def _cores_for(self, msg):
        if self.mode == MODE_INDIVIDUALS:
            core = self.cores.get(msg.agent_id)
            return [core] if core is not None else []
        return list(self.cores.values())

    def feed(self, msg):
        for core in self._cores_for(msg):
            if isinstance(msg, Hello) and self.mode != MODE_FUSION:
                # the metric origin keeps the identity session hello gives it
                core.hello(msg)
                core.assume_aligned(msg.agent_id, self.truth[msg.agent_id])
                continue
            core.handle(msg)
            if not isinstance(msg, FrameMessage):
                continue
            if self.mode == MODE_FUSION:
                core.tick(msg.timestamp_ns / 1e9)
            core.drain_ingest()
            core.optimize(self.config.optimizer.steps_per_frame)
        if isinstance(msg, FrameMessage):
            self.frames += 1
            if self.eval_every_frames and self.frames % self.eval_every_frames == 0:
                self.history[self.frames] = self.evaluate().mean_psnr

    def finish(self):
        """Align what can still be aligned and ingest the remaining queues."""
        for core in self.cores.values():
            if self.mode == MODE_FUSION:
                while core.try_align() is not None:
                    pass
            core.drain_ingest()

    def evaluate(self):
        holdout = self.config.pool.holdout_every
        if self.mode != MODE_INDIVIDUALS:
            core = self.cores[0]
            return evaluate(core.mapper.snapshot(), self.scene, holdout, self.truth)
        table = EvaluationTable(with_alignment=False)
        for agent_id, core in self.cores.items():
            sub = evaluate(core.mapper.snapshot(), self.scene, holdout)
            table.rows.append(AgentMetrics(agent_id, sub.mean_psnr, sub.mean_depth_l1,
                                           sum(r.views for r in sub.rows)))
        return table

    def run(self, messages):
        started = time.perf_counter()
        for msg in messages:
            self.feed(msg)
        self.finish()
        wall = time.perf_counter() - started
        table = self.evaluate()
        reports = [r for core in self.cores.values() for r in core.reports]
        timing = {}
        for core in self.cores.values():
            for key, value in core.mapper.timing().items():
                timing[key] = max(timing.get(key, 0.0), value)
        logger.info('%s run: %d frames in %.1f s, mean psnr %s', self.mode, self.frames, wall, table.mean_psnr)
        return PipelineResult(
            self.mode, {k: c.mapper.snapshot() for k, c in self.cores.items()}, table,
            dict(self.history), reports, self.frames, wall, timing,
        )


def run_pipeline(scene, messages, config=None, mode=MODE_FUSION, seed=0, eval_every_frames=0, sfm=None):
    return LockstepRunner(scene, config, mode, seed, eval_every_frames, sfm).run(messages)


def psnr_gap(fusion: PipelineResult, oracle: PipelineResult) -> Optional[float]:
    if fusion.final_psnr is None or oracle.final_psnr is None:
        return None
    return float(oracle.final_psnr - fusion.final_psnr)
