"""
Held-out evaluation of a map against a synthetic scene's ground truth.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from ..conf import RendererConfig
from ..geometry import transform_error
from ..splatmap.renderer import Camera, render

logger = logging.getLogger(__name__)

PSNR_CAP_DB = 99.0
DEPTH_ALPHA_MIN = 0.5


def psnr(image, reference, cap=PSNR_CAP_DB):
    """PSNR in dB of images with values in [0, 1]; identical images give ``cap``."""
    mse = float(np.mean((np.asarray(image, dtype=np.float64) - np.asarray(reference, dtype=np.float64)) ** 2))
    if mse <= 0.0:
        return cap
    return min(cap, -10.0 * math.log10(mse))


def depth_l1(depth, reference, valid):
    """Mean absolute depth error over ``valid`` pixels; None when there are none."""
    if not np.any(valid):
        return None
    return float(np.mean(np.abs(np.asarray(depth)[valid] - np.asarray(reference)[valid])))


def holdout_seqs(frames, every):
    """Sequence numbers held out of training: every ``every``-th frame, starting at 0."""
    if every <= 0:
        return []
    return list(range(0, frames, every))


def is_holdout(seq, every):
    return every > 0 and seq % every == 0


@dataclass
class AgentMetrics:
    agent_id: int
    psnr: Optional[float] = None
    depth_l1: Optional[float] = None
    views: int = 0
    translation_err: Optional[float] = None
    rotation_err: Optional[float] = None
    scale_err: Optional[float] = None

    def as_dict(self):
        return {
            'agent_id': self.agent_id, 'psnr': self.psnr, 'depth_l1': self.depth_l1, 'views': self.views,
            'translation_err': self.translation_err, 'rotation_err': self.rotation_err,
            'scale_err': self.scale_err,
        }


@dataclass
class EvaluationTable:
    rows: List[AgentMetrics] = field(default_factory=list)
    with_alignment: bool = True

    def row(self, agent_id):
        return next((r for r in self.rows if r.agent_id == agent_id), None)

    @property
    def mean_psnr(self):
        values = [r.psnr for r in self.rows if r.psnr is not None]
        return float(np.mean(values)) if values else None

    @property
    def mean_depth_l1(self):
        values = [r.depth_l1 for r in self.rows if r.depth_l1 is not None]
        return float(np.mean(values)) if values else None

    def format(self):
        return format_table(self)


def render_view(gaussians, intrinsics, pose, renderer=None):
    renderer = renderer or RendererConfig()
    return render(gaussians, Camera.from_pose(intrinsics, pose), renderer.z_near, renderer.cutoff_sigmas)


def evaluate_view(gaussians, scene, agent_id, seq, renderer=None, reference=None):
    """(psnr, depth L1 or None) of one held-out view at its ground-truth global pose."""
    agent = scene.agents[agent_id]
    pose = agent.global_pose(seq)
    reference = reference or render_view(scene.gaussians, agent.intrinsics, pose, renderer)
    result = render_view(gaussians, agent.intrinsics, pose, renderer)
    rgb = np.clip(result.rgb, 0.0, 1.0)
    valid = reference.alpha > DEPTH_ALPHA_MIN
    return psnr(rgb, np.clip(reference.rgb, 0.0, 1.0)), depth_l1(result.depth, reference.depth, valid)


def evaluate(snapshot, scene, holdout_every=10, truth=None, renderer=None, agents=None):
    """
    Per-agent metrics table of ``snapshot`` on the held-out views of
    ``scene``. ``truth`` maps agent ids to ground-truth transforms; without
    it the alignment columns are left out.
    """
    table = EvaluationTable(with_alignment=truth is not None)
    for agent_id in sorted(agents if agents is not None else scene.agents):
        agent = scene.agents[agent_id]
        metrics = AgentMetrics(agent_id)
        scores, depths = [], []
        for seq in holdout_seqs(agent.frames, holdout_every):
            score, l1 = evaluate_view(snapshot.gaussians, scene, agent_id, seq, renderer)
            scores.append(score)
            if l1 is not None:
                depths.append(l1)
        metrics.views = len(scores)
        if scores:
            metrics.psnr = float(np.mean(scores))
        if depths:
            metrics.depth_l1 = float(np.mean(depths))
        if truth is not None and agent_id in snapshot.transforms and agent_id in truth:
            err = transform_error(snapshot.transforms[agent_id], truth[agent_id])
            metrics.translation_err, metrics.rotation_err, metrics.scale_err = err
        table.rows.append(metrics)
    logger.debug('evaluated %d agents, mean psnr %s', len(table.rows), table.mean_psnr)
    return table


def _cell(value, spec):
    return '-' if value is None else format(value, spec)


def format_table(table):
    header = ['agent', 'views', 'psnr_db', 'depth_l1_m']
    if table.with_alignment:
        header += ['trans_err_m', 'rot_err_deg', 'scale_err']
    lines = ['  '.join(f'{h:>12}' for h in header)]
    for r in table.rows:
        cells = [str(r.agent_id), str(r.views), _cell(r.psnr, '.2f'), _cell(r.depth_l1, '.4f')]
        if table.with_alignment:
            cells += [_cell(r.translation_err, '.2e'), _cell(r.rotation_err, '.3f'), _cell(r.scale_err, '.2e')]
        lines.append('  '.join(f'{c:>12}' for c in cells))
    return '\n'.join(lines)
