"""
Isotropic Gaussian splatting renderer with an analytic backward pass.

Every Gaussian in front of the near plane is projected to a disc of screen
radius ``fx * sigma / z``. Its footprint (the pixels within ``cutoff`` screen
sigmas) is listed as (gaussian, pixel) entries that are sorted by pixel and
then by depth, so front-to-back compositing becomes a segmented scan over
one flat array:

    w_k = alpha_k * exp(-|p - proj(mu_k)|^2 / (2 s_k^2))
    T_k = prod_{j<k} (1 - w_j)
    rgb = sum_k c_k w_k T_k,  alpha = sum_k w_k T_k,
    depth = sum_k z_k w_k T_k / max(alpha, 1e-8)

The footprint can be handed back to ``render`` to keep the set and order of
entries fixed while parameters change (finite-difference checks rely on it).

Pixel (u, v) is (column, row) with integer pixel centres; cameras follow the
OpenCV convention and poses are camera-to-world.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

TINY = 1e-30
ALPHA_EPS = 1e-8


@dataclass(frozen=True, eq=False)
class Camera:
    intrinsics: object
    rotation: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'rotation', np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, 'center', np.asarray(self.center, dtype=np.float64).reshape(3))

    @classmethod
    def from_pose(cls, intrinsics, pose):
        return cls(intrinsics, pose.rotation.as_matrix(), pose.translation)

    def to_camera(self, points):
        return (np.asarray(points, dtype=np.float64) - self.center) @ self.rotation


@dataclass(frozen=True, eq=False)
class Footprint:
    gaussian: np.ndarray
    pixel: np.ndarray
    starts: np.ndarray
    segment: np.ndarray
    size: int

    def __len__(self):
        return len(self.gaussian)


@dataclass(eq=False)
class Projection:
    cam: np.ndarray
    u: np.ndarray
    v: np.ndarray
    s: np.ndarray
    visible: np.ndarray

    @property
    def z(self):
        return self.cam[:, 2]


@dataclass(eq=False)
class RenderResult:
    rgb: np.ndarray
    depth: np.ndarray
    alpha: np.ndarray
    dominant: Optional[np.ndarray] = None
    camera: Optional[Camera] = None
    footprint: Optional[Footprint] = None
    projection: Optional[Projection] = None
    means: Optional[np.ndarray] = None
    sigma: Optional[np.ndarray] = None
    opacity: Optional[np.ndarray] = None
    color: Optional[np.ndarray] = None
    falloff: Optional[np.ndarray] = None
    weight: Optional[np.ndarray] = None
    one_minus: Optional[np.ndarray] = None
    transmittance: Optional[np.ndarray] = None
    depth_numerator: Optional[np.ndarray] = None


@dataclass(eq=False)
class RenderGradients:
    means: np.ndarray
    sigma: np.ndarray
    opacity: np.ndarray
    color: np.ndarray
    rotation: np.ndarray
    center: np.ndarray


def project(means, sigma, camera, z_near=0.05):
    intr = camera.intrinsics
    cam = camera.to_camera(means)
    z = cam[:, 2]
    visible = z > z_near
    zs = np.where(visible, z, 1.0)
    u = intr.fx * cam[:, 0] / zs + intr.cx
    v = intr.fy * cam[:, 1] / zs + intr.cy
    s = intr.fx * sigma / zs
    return Projection(cam, u, v, s, visible)


def build_footprint(proj, width, height, cutoff=3.0):
    idx = np.flatnonzero(proj.visible & np.isfinite(proj.u) & np.isfinite(proj.v))
    u, v, r = proj.u[idx], proj.v[idx], cutoff * proj.s[idx]
    x0 = np.clip(np.ceil(u - r), 0, width).astype(np.int64)
    x1 = np.clip(np.floor(u + r), -1, width - 1).astype(np.int64)
    y0 = np.clip(np.ceil(v - r), 0, height).astype(np.int64)
    y1 = np.clip(np.floor(v + r), -1, height - 1).astype(np.int64)
    ok = (x1 >= x0) & (y1 >= y0)
    idx, x0, x1, y0, y1 = idx[ok], x0[ok], x1[ok], y0[ok], y1[ok]
    box_w = x1 - x0 + 1
    counts = box_w * (y1 - y0 + 1)
    total = int(counts.sum())
    if total == 0:
        empty = np.zeros(0, dtype=np.int64)
        return Footprint(empty, empty, empty, empty, len(proj.u))

    g = np.repeat(idx, counts)
    local = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    bw = np.repeat(box_w, counts)
    px = np.repeat(x0, counts) + local % bw
    py = np.repeat(y0, counts) + local // bw
    dx = px - proj.u[g]
    dy = py - proj.v[g]
    keep = dx * dx + dy * dy <= (cutoff * proj.s[g]) ** 2
    g, pixel = g[keep], (py * width + px)[keep]

    order = np.lexsort((proj.v[g], proj.u[g], proj.z[g], pixel))
    g, pixel = g[order], pixel[order]
    first = np.ones(len(pixel), dtype=bool)
    first[1:] = pixel[1:] != pixel[:-1]
    starts = np.flatnonzero(first)
    segment = np.cumsum(first) - 1
    return Footprint(g, pixel, starts, segment, len(proj.u))


def _segment_exclusive_cumsum(values, fp):
    inclusive = np.cumsum(values)
    exclusive = inclusive - values
    return exclusive - exclusive[fp.starts][fp.segment]


def _segment_reverse_exclusive_cumsum(values, fp):
    inclusive = np.cumsum(values)
    totals = np.add.reduceat(values, fp.starts)
    before = (inclusive - values)[fp.starts][fp.segment]
    return totals[fp.segment] - (inclusive - before)


def render(gmap, camera, z_near=0.05, cutoff=3.0, footprint=None, dominant=False,
           means=None, sigma=None, opacity=None, color=None):
    """
    Render ``gmap`` through ``camera``. Parameter arrays may be overridden
    (constrained values) to render a perturbed copy without building a map.
    """
    intr = camera.intrinsics
    height, width = intr.height, intr.width
    npix = width * height
    means = gmap.means if means is None else means
    sigma = gmap.sigma if sigma is None else sigma
    opacity = gmap.opacity if opacity is None else opacity
    color = gmap.color if color is None else color

    proj = project(means, sigma, camera, z_near)
    fp = footprint if footprint is not None else build_footprint(proj, width, height, cutoff)
    if footprint is not None and footprint.size != len(means):
        raise ValueError('footprint was built for a map of a different size')

    result = RenderResult(
        np.zeros((height, width, 3)), np.zeros((height, width)), np.zeros((height, width)),
        camera=camera, footprint=fp, projection=proj, means=means, sigma=sigma,
        opacity=opacity, color=color,
    )
    if dominant:
        result.dominant = np.full((height, width), -1, dtype=np.int64)
    if not len(fp):
        result.depth_numerator = np.zeros(npix)
        return result

    g, pix = fp.gaussian, fp.pixel
    dx = pix % width - proj.u[g]
    dy = pix // width - proj.v[g]
    s = proj.s[g]
    falloff = np.exp(-(dx * dx + dy * dy) / (2.0 * s * s))
    weight = opacity[g] * falloff
    one_minus = np.maximum(1.0 - weight, TINY)
    transmittance = np.exp(_segment_exclusive_cumsum(np.log(one_minus), fp))
    contrib = weight * transmittance

    alpha = np.bincount(pix, contrib, minlength=npix)
    rgb = np.stack([np.bincount(pix, contrib * color[g, c], minlength=npix) for c in range(3)], axis=1)
    dnum = np.bincount(pix, contrib * proj.z[g], minlength=npix)
    depth = dnum / np.maximum(alpha, ALPHA_EPS)

    result.rgb = rgb.reshape(height, width, 3)
    result.alpha = alpha.reshape(height, width)
    result.depth = depth.reshape(height, width)
    result.falloff = falloff
    result.weight = weight
    result.one_minus = one_minus
    result.transmittance = transmittance
    result.depth_numerator = dnum
    if dominant:
        order = np.lexsort((-contrib, pix))
        result.dominant.reshape(-1)[pix[fp.starts]] = g[order[fp.starts]]
    return result


def render_backward(result, grad_rgb=None, grad_depth=None, grad_alpha=None):
    """
    Gradients of a scalar loss with respect to the constrained parameters
    (means, sigma, opacity, colour) and the camera (left rotation tangent in
    world coordinates and camera centre), given the loss gradients with
    respect to the three output images.
    """
    camera = result.camera
    intr = camera.intrinsics
    n = len(result.means)
    width = intr.width
    npix = width * intr.height
    grads = RenderGradients(np.zeros((n, 3)), np.zeros(n), np.zeros(n), np.zeros((n, 3)),
                            np.zeros(3), np.zeros(3))
    fp = result.footprint
    if not len(fp):
        return grads

    g_rgb = np.zeros((npix, 3)) if grad_rgb is None else np.asarray(grad_rgb, dtype=np.float64).reshape(npix, 3)
    g_depth = np.zeros(npix) if grad_depth is None else np.asarray(grad_depth, dtype=np.float64).reshape(npix)
    g_alpha = np.zeros(npix) if grad_alpha is None else np.asarray(grad_alpha, dtype=np.float64).reshape(npix).copy()

    alpha = result.alpha.reshape(npix)
    alpha_c = np.maximum(alpha, ALPHA_EPS)
    g_dnum = g_depth / alpha_c
    g_alpha = g_alpha + np.where(alpha > ALPHA_EPS, -g_depth * result.depth_numerator / (alpha_c * alpha_c), 0.0)

    proj = result.projection
    g, pix = fp.gaussian, fp.pixel
    z = proj.z[g]
    color = result.color[g]
    weight, transmittance = result.weight, result.transmittance
    contrib = weight * transmittance

    value = np.einsum('ij,ij->i', g_rgb[pix], color) + g_dnum[pix] * z + g_alpha[pix]
    behind = _segment_reverse_exclusive_cumsum(value * contrib, fp)
    d_weight = value * transmittance - behind / result.one_minus

    for c in range(3):
        grads.color[:, c] = np.bincount(g, g_rgb[pix, c] * contrib, minlength=n)
    grads.opacity = np.bincount(g, d_weight * result.falloff, minlength=n)

    dx = pix % width - proj.u[g]
    dy = pix // width - proj.v[g]
    s = proj.s[g]
    dw_w = d_weight * weight
    g_u = np.bincount(g, dw_w * dx / (s * s), minlength=n)
    g_v = np.bincount(g, dw_w * dy / (s * s), minlength=n)
    g_s = np.bincount(g, dw_w * (dx * dx + dy * dy) / (s * s * s), minlength=n)
    g_z = np.bincount(g, g_dnum[pix] * contrib, minlength=n)

    cam = proj.cam
    zc = np.where(proj.visible, cam[:, 2], 1.0)
    g_cam = np.zeros((n, 3))
    g_cam[:, 0] = g_u * intr.fx / zc
    g_cam[:, 1] = g_v * intr.fy / zc
    g_cam[:, 2] = (g_z - g_u * intr.fx * cam[:, 0] / (zc * zc) - g_v * intr.fy * cam[:, 1] / (zc * zc)
                   - g_s * proj.s / zc)
    grads.sigma = g_s * intr.fx / zc

    grads.means = g_cam @ camera.rotation.T
    grads.center = -grads.means.sum(axis=0)
    grads.rotation = np.cross(grads.means, result.means - camera.center).sum(axis=0)
    return grads
