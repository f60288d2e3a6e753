"""
Rigid and similarity transform algebra plus the rotation-aware absolute
orientation solver used to register SLAM trajectories against SfM poses.

All values are immutable once built and safe to share between tasks.
"""

import math
import struct
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from .exceptions import DegenerateInput, ScaleUndetermined

SIM3_STRUCT = struct.Struct('<8d')

SCALE_BOUNDS = (1e-6, 1e6)


def skew(v):
    """Cross-product matrix of a 3-vector."""
    x, y, z = v
    return np.array([
        [0.0, -z, y],
        [z, 0.0, -x],
        [-y, x, 0.0],
    ])


def so3_exp(rotvec):
    """Rotation matrix of an axis-angle vector (Rodrigues)."""
    rotvec = np.asarray(rotvec, dtype=np.float64)
    angle = float(np.linalg.norm(rotvec))
    if angle < 1e-12:
        return np.eye(3) + skew(rotvec)
    k = skew(rotvec / angle)
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def left_jacobian(rotvec):
    """
    Left Jacobian of SO(3): exp(v + d) ~= exp(J(v) d) exp(v) for small d.
    """
    rotvec = np.asarray(rotvec, dtype=np.float64)
    angle = float(np.linalg.norm(rotvec))
    k = skew(rotvec)
    if angle < 1e-8:
        return np.eye(3) + 0.5 * k
    a2 = angle * angle
    return (
        np.eye(3)
        + (1.0 - math.cos(angle)) / a2 * k
        + (angle - math.sin(angle)) / (a2 * angle) * (k @ k)
    )


def project_to_so3(matrix):
    """
    Closest rotation to ``matrix`` in the sense of maximising tr(R^T M).
    The smallest singular direction is flipped when needed so det(R) = +1.
    """
    u, _, vt = np.linalg.svd(matrix)
    d = 1.0 if np.linalg.det(u @ vt) >= 0.0 else -1.0
    return u @ np.diag([1.0, 1.0, d]) @ vt


@dataclass(frozen=True)
class Rotation3:
    """
    Unit quaternion (w, x, y, z) kept in canonical form w >= 0.
    """
    w: float = 1.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_quaternion(cls, w, x, y, z, normalize=True):
        if normalize:
            norm = math.sqrt(w * w + x * x + y * y + z * z)
            if norm == 0.0:
                raise DegenerateInput('zero quaternion')
            if abs(norm - 1.0) > 1e-15:
                w, x, y, z = w / norm, x / norm, y / norm, z / norm
        if w < 0.0:
            w, x, y, z = -w, -x, -y, -z
        return cls(float(w), float(x), float(y), float(z))

    @classmethod
    def from_matrix(cls, matrix):
        qx, qy, qz, qw = Rotation.from_matrix(np.asarray(matrix, dtype=np.float64)).as_quat()
        return cls.from_quaternion(qw, qx, qy, qz)

    @classmethod
    def from_rotvec(cls, rotvec):
        qx, qy, qz, qw = Rotation.from_rotvec(np.asarray(rotvec, dtype=np.float64)).as_quat()
        return cls.from_quaternion(qw, qx, qy, qz)

    @classmethod
    def random(cls, rng):
        q = rng.normal(size=4)
        return cls.from_quaternion(*q)

    @property
    def quaternion(self):
        return np.array([self.w, self.x, self.y, self.z])

    def as_matrix(self):
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array([
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ])

    def as_rotvec(self):
        return Rotation.from_quat([self.x, self.y, self.z, self.w]).as_rotvec()

    def inverse(self):
        return Rotation3(self.w, -self.x, -self.y, -self.z)

    def __mul__(self, other):
        """Hamilton product: (self * other) rotates by other first."""
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return Rotation3.from_quaternion(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
            normalize=False,
        )

    def apply(self, vectors):
        return np.asarray(vectors, dtype=np.float64) @ self.as_matrix().T

    def angle_to(self, other):
        """Geodesic angle to ``other`` in degrees."""
        rel = self.inverse() * other
        vec = math.sqrt(rel.x * rel.x + rel.y * rel.y + rel.z * rel.z)
        return math.degrees(2.0 * math.atan2(vec, abs(rel.w)))


def _vector(values):
    arr = np.array(values, dtype=np.float64).reshape(3)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SE3Pose:
    """Camera-to-world rigid pose."""
    rotation: Rotation3 = field(default_factory=Rotation3)
    translation: np.ndarray = field(default_factory=lambda: _vector((0.0, 0.0, 0.0)))

    def __post_init__(self):
        object.__setattr__(self, 'translation', _vector(self.translation))

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, matrix):
        matrix = np.asarray(matrix, dtype=np.float64)
        return cls(Rotation3.from_matrix(matrix[:3, :3]), matrix[:3, 3])

    @classmethod
    def from_array(cls, values):
        """(qw, qx, qy, qz, tx, ty, tz), the wire layout."""
        qw, qx, qy, qz, tx, ty, tz = values
        return cls(Rotation3.from_quaternion(qw, qx, qy, qz), (tx, ty, tz))

    def to_array(self):
        return np.concatenate([self.rotation.quaternion, self.translation])

    @property
    def matrix(self):
        out = np.eye(4)
        out[:3, :3] = self.rotation.as_matrix()
        out[:3, 3] = self.translation
        return out

    def compose(self, other):
        """self ∘ other."""
        return SE3Pose(
            self.rotation * other.rotation,
            self.rotation.apply(other.translation) + self.translation,
        )

    def inverse(self):
        inv = self.rotation.inverse()
        return SE3Pose(inv, -inv.apply(self.translation))

    def apply(self, points):
        return self.rotation.apply(points) + self.translation

    def allclose(self, other, atol=1e-9):
        return (
            self.rotation.angle_to(other.rotation) <= math.degrees(atol)
            and np.allclose(self.translation, other.translation, atol=atol, rtol=0.0)
        )


@dataclass(frozen=True, eq=False)
class Sim3Transform:
    """
    x -> s * R x + t. Maps one coordinate frame into another; this is the
    unit the aligner produces (local SLAM frame -> global map frame).
    """
    scale: float = 1.0
    rotation: Rotation3 = field(default_factory=Rotation3)
    translation: np.ndarray = field(default_factory=lambda: _vector((0.0, 0.0, 0.0)))

    def __post_init__(self):
        if not self.scale > 0.0:
            raise DegenerateInput(f'similarity scale must be positive, got {self.scale}')
        object.__setattr__(self, 'scale', float(self.scale))
        object.__setattr__(self, 'translation', _vector(self.translation))

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def random(cls, rng, scale_range=(0.5, 2.0), translation_sigma=1.0):
        lo, hi = scale_range
        scale = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
        return cls(scale, Rotation3.random(rng), rng.normal(scale=translation_sigma, size=3))

    @classmethod
    def from_array(cls, values):
        """(s, qw, qx, qy, qz, tx, ty, tz)."""
        s, qw, qx, qy, qz, tx, ty, tz = (float(v) for v in values)
        return cls(s, Rotation3.from_quaternion(qw, qx, qy, qz), (tx, ty, tz))

    def to_array(self):
        return np.concatenate([[self.scale], self.rotation.quaternion, self.translation])

    def to_bytes(self):
        return SIM3_STRUCT.pack(*self.to_array())

    @classmethod
    def from_bytes(cls, data):
        return cls.from_array(SIM3_STRUCT.unpack(data))

    @property
    def matrix(self):
        out = np.eye(4)
        out[:3, :3] = self.scale * self.rotation.as_matrix()
        out[:3, 3] = self.translation
        return out

    def apply(self, points):
        return self.scale * self.rotation.apply(points) + self.translation

    def inverse(self):
        inv = self.rotation.inverse()
        return Sim3Transform(1.0 / self.scale, inv, -inv.apply(self.translation) / self.scale)

    def is_identity(self, atol=1e-9):
        return (
            abs(self.scale - 1.0) <= atol
            and self.rotation.angle_to(Rotation3()) <= math.degrees(atol)
            and np.allclose(self.translation, 0.0, atol=atol, rtol=0.0)
        )


def compose(outer, inner):
    """outer ∘ inner = (s2 s1, R2 R1, s2 R2 t1 + t2)."""
    return Sim3Transform(
        outer.scale * inner.scale,
        outer.rotation * inner.rotation,
        outer.scale * outer.rotation.apply(inner.translation) + outer.translation,
    )


def apply_to_pose(transform, pose):
    """Re-express a pose in the target frame; the scale moves positions only."""
    return SE3Pose(
        transform.rotation * pose.rotation,
        transform.scale * transform.rotation.apply(pose.translation) + transform.translation,
    )


class TransformError(NamedTuple):
    translation_err: float
    rotation_err: float
    scale_err: float


def transform_error(ta, tb):
    return TransformError(
        float(np.linalg.norm(ta.translation - tb.translation)),
        ta.rotation.angle_to(tb.rotation),
        abs(math.log(ta.scale / tb.scale)),
    )


@dataclass(frozen=True, eq=False)
class PosePairSet:
    """W corresponding poses: source frame (e.g. SLAM) and target frame (e.g. SfM)."""
    sources: Sequence[SE3Pose]
    targets: Sequence[SE3Pose]

    def __post_init__(self):
        if len(self.sources) != len(self.targets):
            raise DegenerateInput(
                f'pose lists differ in length ({len(self.sources)} vs {len(self.targets)})'
            )
        object.__setattr__(self, 'sources', tuple(self.sources))
        object.__setattr__(self, 'targets', tuple(self.targets))

    def __len__(self):
        return len(self.sources)

    @property
    def W(self):
        return len(self.sources)

    def arrays(self):
        src_t = np.array([p.translation for p in self.sources]).reshape(-1, 3)
        tgt_t = np.array([p.translation for p in self.targets]).reshape(-1, 3)
        src_r = np.array([p.rotation.as_matrix() for p in self.sources]).reshape(-1, 3, 3)
        tgt_r = np.array([p.rotation.as_matrix() for p in self.targets]).reshape(-1, 3, 3)
        return src_t, src_r, tgt_t, tgt_r


@dataclass(frozen=True, eq=False)
class OrientationResult:
    transform: Sim3Transform
    translation_rmse: float
    rotation_rmse: float
    objective: float
    iterations: int
    scale_undetermined: bool = False
    objective_trace: tuple = ()


def _objective(scale, rot, trans, src_t, src_r, tgt_t, tgt_r, epsilon):
    resid = scale * src_t @ rot.T + trans - tgt_t
    value = float(np.sum(resid * resid))
    if epsilon:
        diff = np.einsum('ij,kjl->kil', rot, src_r) - tgt_r
        value += epsilon * float(np.sum(diff * diff))
    return value


def orientation_objective(transform, pairs, epsilon):
    """
    sum_k ||s R t_k^src + t - t_k^tgt||^2 + eps * ||R R_k^src - R_k^tgt||_F^2
    """
    src_t, src_r, tgt_t, tgt_r = pairs.arrays()
    return _objective(
        transform.scale, transform.rotation.as_matrix(), transform.translation,
        src_t, src_r, tgt_t, tgt_r, epsilon,
    )


def rotation_rmse_degrees(rot, src_r, tgt_r):
    """RMS geodesic angle between R R_k^src and R_k^tgt, in degrees."""
    mapped = np.einsum('ij,kjl->kil', rot, src_r)
    rel = np.einsum('kji,kjl->kil', mapped, tgt_r)
    angles = Rotation.from_matrix(rel).magnitude()
    return float(np.degrees(np.sqrt(np.mean(angles * angles))))


def translation_rmse(scale, rot, trans, src_t, tgt_t):
    resid = scale * src_t @ rot.T + trans - tgt_t
    return float(np.sqrt(np.mean(np.sum(resid * resid, axis=1))))


def solve_absolute_orientation(pairs, epsilon=1e-3, strict=False, max_iterations=50,
                               tolerance=1e-12):
    """
    Rotation-aware absolute orientation by block-coordinate descent.

    Alternates the three closed-form block minimisers: rotation by SVD
    projection of (s C_t + eps C_R), scale by the trace ratio, translation
    from the centroids. Every iteration is non-increasing in the objective.

    Coincident source translations leave the scale unobservable: s is fixed
    to 1, the rotation comes from the epsilon term alone and the result is
    flagged (``strict=True`` raises ScaleUndetermined carrying the result).
    """
    if len(pairs) == 0:
        raise DegenerateInput('absolute orientation needs at least one pose pair')
    if epsilon < 0.0:
        raise DegenerateInput(f'epsilon must be non-negative, got {epsilon}')

    src_t, src_r, tgt_t, tgt_r = pairs.arrays()
    mu_src = src_t.mean(axis=0)
    mu_tgt = tgt_t.mean(axis=0)
    a = src_t - mu_src
    b = tgt_t - mu_tgt
    spread = float(np.sum(a * a))
    c_t = b.T @ a
    c_r = np.einsum('kij,klj->il', tgt_r, src_r)

    coincident = float(np.max(np.linalg.norm(a, axis=1))) < 1e-12
    if coincident:
        if epsilon == 0.0:
            raise DegenerateInput('coincident source translations and epsilon = 0')
        rot = project_to_so3(c_r)
        scale = 1.0
        trans = mu_tgt - rot @ mu_src
        objective = _objective(scale, rot, trans, src_t, src_r, tgt_t, tgt_r, epsilon)
        trace = (objective,)
        iterations = 1
    else:
        scale = 1.0
        previous = math.inf
        trace = []
        iterations = 0
        for iterations in range(1, max_iterations + 1):
            rot = project_to_so3(scale * c_t + epsilon * c_r)
            scale = float(np.clip(np.trace(rot.T @ c_t) / spread, *SCALE_BOUNDS))
            trans = mu_tgt - scale * rot @ mu_src
            objective = _objective(scale, rot, trans, src_t, src_r, tgt_t, tgt_r, epsilon)
            trace.append(objective)
            if previous - objective < tolerance:
                break
            previous = objective
        trace = tuple(trace)

    result = OrientationResult(
        transform=Sim3Transform(scale, Rotation3.from_matrix(rot), trans),
        translation_rmse=translation_rmse(scale, rot, trans, src_t, tgt_t),
        rotation_rmse=rotation_rmse_degrees(rot, src_r, tgt_r),
        objective=trace[-1],
        iterations=iterations,
        scale_undetermined=coincident,
        objective_trace=trace,
    )
    if coincident and strict:
        raise ScaleUndetermined('source translations coincide; scale fixed to 1', result)
    return result


def umeyama(source_points, target_points):
    """Classical scaled orthogonal Procrustes fit of target ~ s R source + t."""
    src = np.asarray(source_points, dtype=np.float64)
    dst = np.asarray(target_points, dtype=np.float64)
    mu_src = src.mean(axis=0)
    mu_dst = dst.mean(axis=0)
    a = src - mu_src
    b = dst - mu_dst
    cov = b.T @ a / len(src)
    u, sing, vt = np.linalg.svd(cov)
    d = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0.0:
        d[2] = -1.0
    rot = u @ np.diag(d) @ vt
    var = np.sum(a * a) / len(src)
    scale = float(np.dot(sing, d) / var)
    return Sim3Transform(scale, Rotation3.from_matrix(rot), mu_dst - scale * rot @ mu_src)


def brute_force_orientation(pairs, epsilon=1e-3, restarts=200, seed=0):
    """
    Verification oracle: random-restart nonlinear least squares over
    (log s, axis-angle, t). Returns (objective, transform) of the best restart.
    """
    src_t, src_r, tgt_t, tgt_r = pairs.arrays()
    root_eps = math.sqrt(epsilon)
    mu_src = src_t.mean(axis=0)
    mu_tgt = tgt_t.mean(axis=0)

    def residuals(params):
        scale = math.exp(params[0])
        rot = Rotation.from_rotvec(params[1:4]).as_matrix()
        trans = params[4:7]
        res_t = (scale * src_t @ rot.T + trans - tgt_t).ravel()
        if not epsilon:
            return res_t
        res_r = root_eps * (np.einsum('ij,kjl->kil', rot, src_r) - tgt_r).ravel()
        return np.concatenate([res_t, res_r])

    rng = np.random.default_rng(seed)
    best_value = math.inf
    best = None
    for _ in range(restarts):
        log_s = rng.uniform(math.log(1e-2), math.log(1e2))
        rotvec = Rotation.random(random_state=rng).as_rotvec()
        rot = Rotation.from_rotvec(rotvec).as_matrix()
        trans = mu_tgt - math.exp(log_s) * rot @ mu_src
        start = np.concatenate([[log_s], rotvec, trans])
        fit = least_squares(residuals, start, xtol=1e-15, ftol=1e-15, gtol=1e-15)
        rot = Rotation.from_rotvec(fit.x[1:4]).as_matrix()
        value = _objective(math.exp(fit.x[0]), rot, fit.x[4:7], src_t, src_r, tgt_t, tgt_r, epsilon)
        if value < best_value:
            best_value = value
            best = fit.x
    transform = Sim3Transform(
        math.exp(best[0]), Rotation3.from_rotvec(best[1:4]), best[4:7],
    )
    return best_value, transform
