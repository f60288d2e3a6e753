"""
Struct-of-arrays storage for isotropic Gaussians.

Parameters are kept in the unconstrained form the optimizer updates:
log-sigma, opacity logit and colour logit. The constrained values are
derived on access.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.special import expit, logit

logger = logging.getLogger(__name__)

_EPS = 1e-6


@dataclass(frozen=True)
class Gaussian:
    mean: Tuple[float, float, float]
    sigma: float
    opacity: float
    color: Tuple[float, float, float]
    source: Tuple[int, int]


def _logit(p):
    return logit(np.clip(p, _EPS, 1.0 - _EPS))


class GaussianMap:
    """
    Arrays ``means`` (N, 3), ``log_sigma`` (N,), ``opacity_logit`` (N,),
    ``color_logit`` (N, 3) plus source attribution ``agent`` and ``seq``.
    """

    PARAMETERS = ('means', 'log_sigma', 'opacity_logit', 'color_logit')

    def __init__(self, means=None, log_sigma=None, opacity_logit=None, color_logit=None,
                 agent=None, seq=None):
        self.means = np.zeros((0, 3)) if means is None else np.asarray(means, dtype=np.float64).reshape(-1, 3)
        n = len(self.means)
        self.log_sigma = np.zeros(n) if log_sigma is None else np.asarray(log_sigma, dtype=np.float64).reshape(n)
        self.opacity_logit = (np.zeros(n) if opacity_logit is None
                              else np.asarray(opacity_logit, dtype=np.float64).reshape(n))
        self.color_logit = (np.zeros((n, 3)) if color_logit is None
                            else np.asarray(color_logit, dtype=np.float64).reshape(n, 3))
        self.agent = np.zeros(n, dtype=np.int64) if agent is None else np.asarray(agent, dtype=np.int64).reshape(n)
        self.seq = np.zeros(n, dtype=np.int64) if seq is None else np.asarray(seq, dtype=np.int64).reshape(n)

    @classmethod
    def from_values(cls, means, sigma, opacity, color, agent=None, seq=None):
        """Build from constrained values: sigma > 0, opacity and colour in (0, 1)."""
        sigma = np.asarray(sigma, dtype=np.float64)
        if np.any(sigma <= 0):
            raise ValueError('sigma must be positive')
        return cls(means, np.log(sigma), _logit(np.asarray(opacity, dtype=np.float64)),
                   _logit(np.asarray(color, dtype=np.float64)), agent, seq)

    def __len__(self):
        return len(self.means)

    @property
    def sigma(self):
        return np.exp(self.log_sigma)

    @property
    def opacity(self):
        return expit(self.opacity_logit)

    @property
    def color(self):
        return expit(self.color_logit)

    def __getitem__(self, index):
        return Gaussian(
            tuple(float(v) for v in self.means[index]),
            float(np.exp(self.log_sigma[index])),
            float(expit(self.opacity_logit[index])),
            tuple(float(v) for v in expit(self.color_logit[index])),
            (int(self.agent[index]), int(self.seq[index])),
        )

    def copy(self):
        return GaussianMap(self.means.copy(), self.log_sigma.copy(), self.opacity_logit.copy(),
                           self.color_logit.copy(), self.agent.copy(), self.seq.copy())

    def take(self, index):
        return GaussianMap(self.means[index], self.log_sigma[index], self.opacity_logit[index],
                           self.color_logit[index], self.agent[index], self.seq[index])

    def extend(self, other):
        self.means = np.concatenate([self.means, other.means])
        self.log_sigma = np.concatenate([self.log_sigma, other.log_sigma])
        self.opacity_logit = np.concatenate([self.opacity_logit, other.opacity_logit])
        self.color_logit = np.concatenate([self.color_logit, other.color_logit])
        self.agent = np.concatenate([self.agent, other.agent])
        self.seq = np.concatenate([self.seq, other.seq])
        return len(other)

    def remove(self, mask):
        keep = ~np.asarray(mask, dtype=bool)
        removed = int(len(keep) - keep.sum())
        if removed:
            for name in self.PARAMETERS + ('agent', 'seq'):
                setattr(self, name, getattr(self, name)[keep])
        return removed

    def parameters(self):
        return {name: getattr(self, name) for name in self.PARAMETERS}

    def equals(self, other):
        """Bitwise equality of every array."""
        return len(self) == len(other) and all(
            np.array_equal(getattr(self, name), getattr(other, name))
            for name in self.PARAMETERS + ('agent', 'seq')
        )

    def counts_by_agent(self):
        agents, counts = np.unique(self.agent, return_counts=True)
        return {int(a): int(c) for a, c in zip(agents, counts)}


def spawn_from_frame(frame, transform, count, rng, metric_depth=False, initial_opacity=0.3):
    """
    New Gaussians from ``count`` random pixels (or points) of ``frame``
    placed in the global frame through ``transform``. Sigma is the distance
    to the source camera centre over the focal length, all in global scale.
    A frame without valid depth spawns nothing.
    """
    intr = frame.intrinsics
    center = transform.apply(frame.pose.translation)
    if frame.depth is not None:
        depth = np.asarray(frame.depth, dtype=np.float64)
        valid = np.flatnonzero(np.isfinite(depth) & (depth > 0))
        if not len(valid):
            logger.debug('frame %s has no valid depth, nothing spawned', frame.frame_id)
            return GaussianMap()
        pick = rng.choice(valid, size=min(count, len(valid)), replace=False)
        v, u = np.divmod(pick, intr.width)
        d = depth.reshape(-1)[pick]
        if metric_depth:
            d = d / transform.scale
        local = frame.pose.apply(intr.unproject(u, v, d))
        colors = frame.rgb_float()[v, u]
    else:
        points = np.asarray(frame.points, dtype=np.float64).reshape(-1, 3)
        if not len(points):
            return GaussianMap()
        pick = rng.choice(len(points), size=min(count, len(points)), replace=False)
        local = points[pick]
        colors = np.asarray(frame.point_colors, dtype=np.float64)[pick] / 255.0
    means = transform.apply(local)
    sigma = np.maximum(np.linalg.norm(means - center, axis=1), _EPS) / intr.fx
    n = len(means)
    return GaussianMap.from_values(
        means, sigma, np.full(n, initial_opacity), colors,
        np.full(n, frame.agent_id), np.full(n, frame.seq),
    )


def prune(gmap, alpha_min):
    if alpha_min <= 0 or not len(gmap):
        return 0
    removed = gmap.remove(gmap.opacity < alpha_min)
    if removed:
        logger.debug('pruned %d gaussians below opacity %.3f', removed, alpha_min)
    return removed
