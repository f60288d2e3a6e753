"""
Photometric and depth optimisation of the Gaussian map.

One step samples a batch from the training pool, renders every frame at its
refined pose, applies the frame's affine colour correction and takes a plain
SGD step on the Gaussians, the per-frame pose offsets, the per-agent Sim(3)
corrections and the colour corrections. All gradients are analytic.

A frame of agent j is rendered from

    R = Exp(d_theta) R_C R_jg R_local
    c = s_C R_C (s_jg R_jg t_local + t_jg) + t_C + d_t

where (s_jg, R_jg, t_jg) is the alignment result, (s_C, R_C, t_C) the
agent correction and (d_theta, d_t) the frame's offset.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from ..exceptions import EmptyPool
from ..geometry import Rotation3, Sim3Transform, compose, left_jacobian, so3_exp
from .renderer import Camera, render, render_backward

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class AgentCorrection:
    """Sim(3) correction applied after an agent's alignment transform."""
    log_scale: float = 0.0
    rotvec: np.ndarray = field(default_factory=lambda: np.zeros(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    frozen: bool = False

    def as_transform(self):
        return Sim3Transform(math.exp(self.log_scale), Rotation3.from_rotvec(self.rotvec), self.translation)

    def regularization(self, beta_t, beta_r, beta_s):
        if self.frozen:
            return 0.0
        return (beta_t * float(self.translation @ self.translation) + beta_r * float(self.rotvec @ self.rotvec)
                + beta_s * self.log_scale ** 2)


@dataclass(eq=False)
class AgentModel:
    agent_id: int
    transform: Sim3Transform
    correction: AgentCorrection
    metric_depth: bool = False
    is_origin: bool = False

    @property
    def refined_transform(self):
        return compose(self.correction.as_transform(), self.transform)


class RefinementState:
    """Aligned agents with their corrections; frame offsets live on pool entries."""

    def __init__(self):
        self.agents: Dict[int, AgentModel] = {}

    def __contains__(self, agent_id):
        return agent_id in self.agents

    def add_agent(self, agent_id, transform, is_origin=False, metric_depth=False):
        model = AgentModel(agent_id, transform, AgentCorrection(frozen=is_origin), metric_depth, is_origin)
        self.agents[agent_id] = model
        return model

    def transforms(self):
        return {agent_id: model.refined_transform for agent_id, model in self.agents.items()}


@dataclass(eq=False)
class CameraChain:
    """Intermediate values of the refined camera, kept for the pose gradients."""
    camera: Camera
    q: np.ndarray
    correction_scale: float
    delta_rotation: np.ndarray


def refined_camera(entry, state):
    frame = entry.frame
    model = state.agents[frame.agent_id]
    transform, corr = model.transform, model.correction
    rot_jg = transform.rotation.as_matrix()
    position = transform.scale * (rot_jg @ frame.pose.translation) + transform.translation
    rot_c = so3_exp(corr.rotvec)
    s_c = math.exp(corr.log_scale)
    q = rot_c @ position
    center = s_c * q + corr.translation
    rot_delta = so3_exp(entry.rotation_offset)
    rotation = rot_delta @ (rot_c @ (rot_jg @ frame.pose.rotation.as_matrix()))
    camera = Camera(frame.intrinsics, rotation, center + entry.translation_offset)
    return CameraChain(camera, q, s_c, rot_delta)


@dataclass
class StepLosses:
    rgb_l1: float
    depth_l1: float
    total: float


@dataclass(eq=False)
class BatchGradients:
    gaussians: Dict[str, np.ndarray]
    rotation_offset: Dict[int, np.ndarray] = field(default_factory=dict)
    translation_offset: Dict[int, np.ndarray] = field(default_factory=dict)
    affine_matrix: Dict[int, np.ndarray] = field(default_factory=dict)
    affine_offset: Dict[int, np.ndarray] = field(default_factory=dict)
    correction: Dict[int, tuple] = field(default_factory=dict)


def batch_loss_and_gradients(gmap, state, entries, optimizer, renderer, footprints=None):
    """
    Loss and gradients of the mean frame loss over ``entries`` plus the
    regularisers. Returns (StepLosses, BatchGradients, footprints); pass the
    footprints back in to evaluate the same smooth piece of the loss.
    """
    n = len(entries)
    sigma, opacity, color = gmap.sigma, gmap.opacity, gmap.color
    g_means = np.zeros_like(gmap.means)
    g_sigma = np.zeros(len(gmap))
    g_opacity = np.zeros(len(gmap))
    g_color = np.zeros((len(gmap), 3))
    grads = BatchGradients({})
    footprints = list(footprints) if footprints is not None else [None] * n
    rgb_sum = depth_sum = total = 0.0

    for k, entry in enumerate(entries):
        frame = entry.frame
        model = state.agents[frame.agent_id]
        chain = refined_camera(entry, state)
        result = render(gmap, chain.camera, renderer.z_near, renderer.cutoff_sigmas, footprint=footprints[k],
                        sigma=sigma, opacity=opacity, color=color)
        footprints[k] = result.footprint

        rendered = result.rgb.reshape(-1, 3)
        appearance = entry.appearance
        diff = rendered @ appearance.matrix.T + appearance.offset - frame.rgb_float().reshape(-1, 3)
        rgb_l1 = float(np.mean(np.abs(diff)))
        g_pred = np.sign(diff) / (diff.size * n)

        depth_l1 = 0.0
        g_depth = None
        depth_target = None
        if frame.depth is not None:
            measured = np.asarray(frame.depth, dtype=np.float64).reshape(-1)
            valid = np.isfinite(measured) & (measured > 0)
            if valid.any():
                scale = 1.0 if model.metric_depth else model.transform.scale * chain.correction_scale
                depth_target = np.where(valid, measured, 0.0) * scale
                residual = result.depth.reshape(-1) - depth_target
                depth_l1 = float(np.mean(np.abs(residual[valid])))
                g_depth = np.where(valid, np.sign(residual), 0.0) * optimizer.depth_weight / (valid.sum() * n)

        offset_reg = (optimizer.beta_t * float(entry.translation_offset @ entry.translation_offset)
                      + optimizer.beta_r * float(entry.rotation_offset @ entry.rotation_offset))
        rgb_sum += rgb_l1
        depth_sum += depth_l1
        total += (rgb_l1 + optimizer.depth_weight * depth_l1 + offset_reg) / n

        grads.affine_matrix[k] = g_pred.T @ rendered
        grads.affine_offset[k] = g_pred.sum(axis=0)
        back = render_backward(result, g_pred @ appearance.matrix, g_depth)
        g_means += back.means
        g_sigma += back.sigma
        g_opacity += back.opacity
        g_color += back.color

        jac = left_jacobian(entry.rotation_offset)
        grads.rotation_offset[k] = jac.T @ back.rotation + 2.0 * optimizer.beta_r * entry.rotation_offset / n
        grads.translation_offset[k] = back.center + 2.0 * optimizer.beta_t * entry.translation_offset / n

        corr = model.correction
        if corr.frozen:
            continue
        d_scale = chain.correction_scale * float(chain.q @ back.center)
        if g_depth is not None and not model.metric_depth:
            d_scale -= float(g_depth @ depth_target)
        d_rot = left_jacobian(corr.rotvec).T @ (
            chain.delta_rotation.T @ back.rotation + chain.correction_scale * np.cross(chain.q, back.center)
        )
        previous = grads.correction.get(frame.agent_id, (0.0, np.zeros(3), np.zeros(3)))
        grads.correction[frame.agent_id] = (previous[0] + d_scale, previous[1] + d_rot,
                                            previous[2] + back.center)

    for agent_id in {e.frame.agent_id for e in entries}:
        corr = state.agents[agent_id].correction
        if corr.frozen:
            continue
        total += corr.regularization(optimizer.beta_t, optimizer.beta_r, optimizer.beta_s)
        d_scale, d_rot, d_trans = grads.correction[agent_id]
        grads.correction[agent_id] = (
            d_scale + 2.0 * optimizer.beta_s * corr.log_scale,
            d_rot + 2.0 * optimizer.beta_r * corr.rotvec,
            d_trans + 2.0 * optimizer.beta_t * corr.translation,
        )

    grads.gaussians = {
        'means': g_means,
        'log_sigma': g_sigma * sigma,
        'opacity_logit': g_opacity * opacity * (1.0 - opacity),
        'color_logit': g_color * color * (1.0 - color),
    }
    losses = StepLosses(rgb_sum / n, depth_sum / n, total)
    return losses, grads, footprints


def apply_gradients(gmap, state, entries, grads, learning_rates):
    """SGD update in place. A zero learning rate leaves its group untouched."""
    for name, grad in grads.gaussians.items():
        lr = learning_rates[name]
        if lr:
            getattr(gmap, name)[...] -= lr * grad
    lr_rot, lr_trans = learning_rates['pose_rotation'], learning_rates['pose_translation']
    lr_affine = learning_rates['affine']
    for k, entry in enumerate(entries):
        if lr_rot:
            entry.rotation_offset -= lr_rot * grads.rotation_offset[k]
        if lr_trans:
            entry.translation_offset -= lr_trans * grads.translation_offset[k]
        if lr_affine:
            entry.appearance.matrix -= lr_affine * grads.affine_matrix[k]
            entry.appearance.offset -= lr_affine * grads.affine_offset[k]
            entry.appearance.project()
    lr_corr = learning_rates['correction']
    if lr_corr:
        for agent_id, (d_scale, d_rot, d_trans) in grads.correction.items():
            corr = state.agents[agent_id].correction
            corr.log_scale -= lr_corr * d_scale
            corr.rotvec = corr.rotvec - lr_corr * d_rot
            corr.translation = corr.translation - lr_corr * d_trans


def train_step(gmap, pool, state, optimizer, renderer, batch_size, rng):
    """
    One optimisation step; returns the losses measured before the update.
    Raises EmptyPool when there is nothing to train on.
    """
    if not len(gmap):
        raise EmptyPool('the map has no gaussians to optimise')
    entries = pool.sample_batch(batch_size, rng)
    losses, grads, _ = batch_loss_and_gradients(gmap, state, entries, optimizer, renderer)
    apply_gradients(gmap, state, entries, grads, optimizer.learning_rates)
    return losses
