"""
Inter-agent correspondence search.

Place descriptors of unaligned agents are compared against those of aligned
agents with cosine similarity. Pairs above the adaptive threshold of their
agent pair become candidates; candidates are verified by mutual nearest
neighbour matching of local features. When a proposal round verifies
nothing the pair threshold is raised to the mean of the similarities that
cleared it, which suppresses the uniformly inflated scores two images from
the same camera tend to get.
"""

import dataclasses
import logging
import struct
import threading
import zlib
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from .exceptions import FormatError

logger = logging.getLogger(__name__)

FrameId = Tuple[int, int]

SIDECAR_MAGIC = b'HDSC'
SIDECAR_VERSION = 1
_SIDECAR_HEADER = struct.Struct('<4sHH')
_SIDECAR_RECORD = struct.Struct('<IQ')


@dataclass(frozen=True, eq=False)
class PlaceDescriptor:
    frame_id: FrameId
    vector: np.ndarray

    def __post_init__(self):
        vector = np.asarray(self.vector, dtype=np.float64).reshape(-1)
        if abs(np.linalg.norm(vector) - 1.0) > 1e-6:
            raise ValueError(f'place descriptor for {self.frame_id} is not unit norm')
        vector.setflags(write=False)
        object.__setattr__(self, 'vector', vector)
        object.__setattr__(self, 'frame_id', (int(self.frame_id[0]), int(self.frame_id[1])))

    @classmethod
    def from_raw(cls, frame_id, values):
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        return cls(frame_id, values / np.linalg.norm(values))

    @property
    def agent_id(self):
        return self.frame_id[0]


@dataclass(frozen=True)
class CandidateCorrespondence:
    frame_i: FrameId
    frame_j: FrameId
    place_similarity: float
    match_ratio: float = 0.0
    verified: bool = False

    @property
    def pair(self):
        return (self.frame_i[0], self.frame_j[0])


@dataclass(frozen=True, eq=False)
class LocalFeatureSet:
    keypoints: np.ndarray
    descriptors: np.ndarray

    def __post_init__(self):
        keypoints = np.asarray(self.keypoints, dtype=np.float64).reshape(-1, 2)
        descriptors = np.asarray(self.descriptors, dtype=np.float64)
        if descriptors.ndim != 2 or len(descriptors) != len(keypoints):
            raise ValueError('one descriptor row per keypoint is required')
        object.__setattr__(self, 'keypoints', keypoints)
        object.__setattr__(self, 'descriptors', descriptors)

    @classmethod
    def empty(cls, dim=64):
        return cls(np.zeros((0, 2)), np.zeros((0, dim)))

    def __len__(self):
        return len(self.keypoints)

    def within(self, width, height):
        k = self.keypoints
        return bool(np.all((k[:, 0] >= 0) & (k[:, 0] < width) & (k[:, 1] >= 0) & (k[:, 1] < height)))


class ThresholdStore:
    """
    Per (aligned agent, unaligned agent) similarity thresholds. Values only
    ever grow.
    """

    def __init__(self, initial_gamma=0.1):
        self.initial_gamma = float(initial_gamma)
        self._gammas = {}
        self._lock = threading.Lock()

    def get(self, pair):
        with self._lock:
            return self._gammas.get(tuple(pair), self.initial_gamma)

    def raise_to(self, pair, gamma):
        with self._lock:
            current = self._gammas.get(tuple(pair), self.initial_gamma)
            updated = max(current, float(gamma))
            self._gammas[tuple(pair)] = updated
            return updated

    def items(self):
        with self._lock:
            return dict(self._gammas)


class SimilarityCache:
    """Cosine similarities keyed by (frame_i, frame_j); one writer, many readers."""

    def __init__(self):
        self._values = {}
        self.hits = 0
        self.misses = 0

    def __len__(self):
        return len(self._values)

    def get(self, key):
        return self._values.get(key)

    def lookup_or_compute(self, unaligned, aligned):
        keys = [(a.frame_id, u.frame_id) for u in unaligned for a in aligned]
        out = np.empty(len(keys))
        missing = []
        for n, key in enumerate(keys):
            value = self._values.get(key)
            if value is None:
                missing.append(n)
            else:
                out[n] = value
        self.hits += len(keys) - len(missing)
        self.misses += len(missing)
        if missing:
            idx = np.asarray(missing)
            u_rows = np.stack([unaligned[n // len(aligned)].vector for n in missing])
            a_rows = np.stack([aligned[n % len(aligned)].vector for n in missing])
            fresh = np.einsum('ij,ij->i', u_rows, a_rows)
            out[idx] = fresh
            for n, value in zip(missing, fresh):
                self._values[keys[n]] = float(value)
        return keys, out


def propose_candidates(unaligned_descs, aligned_descs, thresholds, cache=None):
    """
    Cross-agent pairs whose cosine similarity exceeds the pair threshold,
    best first. Ties are ordered by frame ids so rounds are reproducible.
    """
    unaligned_descs = list(unaligned_descs)
    aligned_descs = list(aligned_descs)
    if not unaligned_descs or not aligned_descs:
        return []
    cache = cache if cache is not None else SimilarityCache()
    keys, sims = cache.lookup_or_compute(unaligned_descs, aligned_descs)
    candidates = []
    for (frame_i, frame_j), sim in zip(keys, sims):
        if frame_i[0] == frame_j[0]:
            continue
        if sim > thresholds.get((frame_i[0], frame_j[0])):
            candidates.append(CandidateCorrespondence(frame_i, frame_j, float(sim)))
    candidates.sort(key=lambda c: (-c.place_similarity, c.frame_i, c.frame_j))
    return candidates


def mutual_matches(desc_a, desc_b, ratio=0.9):
    """
    Index pairs (a, b) that are each other's L2 nearest neighbour and pass
    the ratio test in both directions.
    """
    if len(desc_a) == 0 or len(desc_b) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    dist = cdist(desc_a, desc_b)
    best_ab = np.argmin(dist, axis=1)
    best_ba = np.argmin(dist, axis=0)
    rows = np.arange(len(desc_a))
    mutual = best_ba[best_ab] == rows

    def passes(d, axis):
        if d.shape[axis] < 2:
            return np.ones(d.shape[1 - axis], dtype=bool)
        two = np.partition(d, 1, axis=axis)
        first, second = (two[0], two[1]) if axis == 0 else (two[:, 0], two[:, 1])
        return first < ratio * second

    ok_a = passes(dist, axis=1)
    ok_b = passes(dist, axis=0)
    keep = mutual & ok_a & ok_b[best_ab]
    return np.stack([rows[keep], best_ab[keep]], axis=1)


def verify_candidate(candidate, feats_i, feats_j, xi=0.25, ratio=0.9):
    """
    Set ``match_ratio`` to mutual matches over the smaller set size. An
    empty feature set rejects the candidate.
    """
    if len(feats_i) == 0 or len(feats_j) == 0:
        return dataclasses.replace(candidate, match_ratio=0.0, verified=False)
    matches = mutual_matches(feats_i.descriptors, feats_j.descriptors, ratio)
    match_ratio = len(matches) / min(len(feats_i), len(feats_j))
    return dataclasses.replace(candidate, match_ratio=float(match_ratio), verified=match_ratio >= xi)


def raise_threshold(pair, observed_similarities, thresholds):
    gamma = thresholds.get(pair)
    above = [s for s in observed_similarities if s > gamma]
    if not above:
        return gamma
    updated = thresholds.raise_to(pair, float(np.mean(above)))
    logger.debug('threshold for pair %s raised %.4f -> %.4f', pair, gamma, updated)
    return updated


class SyntheticDescriptorProvider:
    """
    Place descriptors from ground-truth camera poses: random Fourier features
    of the camera centre and viewing direction, so nearby similar views score
    high. ``device_bias`` adds a shared per-device direction that inflates
    similarity between agents carrying the same ``devices`` key.
    """

    def __init__(self, pose_of, dim=64, seed=0, length_scale=0.6, view_weight=1.0,
                 noise=0.02, device_bias=0.0, devices=None):
        self.pose_of = pose_of
        self.dim = dim
        self.seed = seed
        self.view_weight = view_weight
        self.noise = noise
        self.device_bias = device_bias
        self.devices = devices or {}
        rng = np.random.default_rng([seed, 0xD5C])
        self._omega = rng.normal(scale=1.0 / length_scale, size=(dim, 6))
        self._phase = rng.uniform(0.0, 2.0 * np.pi, size=dim)
        self._device_vectors = {}

    def _device_vector(self, key):
        if key not in self._device_vectors:
            rng = np.random.default_rng([self.seed, 0xDE7, zlib.crc32(str(key).encode())])
            v = rng.normal(size=self.dim)
            self._device_vectors[key] = v / np.linalg.norm(v)
        return self._device_vectors[key]

    def describe(self, agent_id, seq):
        pose = self.pose_of(agent_id, seq)
        if pose is None:
            return None
        forward = pose.rotation.as_matrix()[:, 2]
        x = np.concatenate([pose.translation, self.view_weight * forward])
        features = np.cos(self._omega @ x + self._phase) * np.sqrt(2.0 / self.dim)
        features /= max(np.linalg.norm(features), 1e-12)
        if self.noise:
            rng = np.random.default_rng([self.seed, agent_id, seq])
            features = features + rng.normal(scale=self.noise / np.sqrt(self.dim), size=self.dim)
        if self.device_bias and agent_id in self.devices:
            features = features + self.device_bias * self._device_vector(self.devices[agent_id])
        return PlaceDescriptor.from_raw((agent_id, seq), features)

    def __call__(self, frame):
        return self.describe(frame.agent_id, frame.seq)


class FileDescriptorProvider:
    """Descriptors looked up from a recorded-stream sidecar."""

    def __init__(self, path):
        self.path = path
        self.dim, self._records = read_descriptor_sidecar(path)

    def describe(self, agent_id, seq):
        vector = self._records.get((agent_id, seq))
        if vector is None:
            return None
        return PlaceDescriptor.from_raw((agent_id, seq), vector)

    def __call__(self, frame):
        return self.describe(frame.agent_id, frame.seq)

    def __len__(self):
        return len(self._records)


def write_descriptor_sidecar(path, descriptors, dim):
    with open(path, 'wb') as fh:
        fh.write(_SIDECAR_HEADER.pack(SIDECAR_MAGIC, SIDECAR_VERSION, dim))
        for desc in descriptors:
            if len(desc.vector) != dim:
                raise FormatError(f'descriptor {desc.frame_id} has dimension {len(desc.vector)}, expected {dim}')
            fh.write(_SIDECAR_RECORD.pack(*desc.frame_id))
            fh.write(np.asarray(desc.vector, dtype='<f4').tobytes())


def read_descriptor_sidecar(path):
    with open(path, 'rb') as fh:
        data = fh.read()
    if len(data) < _SIDECAR_HEADER.size:
        raise FormatError(f'{path}: descriptor sidecar header truncated')
    magic, version, dim = _SIDECAR_HEADER.unpack_from(data)
    if magic != SIDECAR_MAGIC:
        raise FormatError(f'{path}: bad descriptor sidecar magic {magic!r}')
    if version != SIDECAR_VERSION:
        raise FormatError(f'{path}: unsupported descriptor sidecar version {version}')
    record_size = _SIDECAR_RECORD.size + 4 * dim
    body = memoryview(data)[_SIDECAR_HEADER.size:]
    if len(body) % record_size:
        raise FormatError(f'{path}: descriptor sidecar body is not a whole number of records')
    records = {}
    for offset in range(0, len(body), record_size):
        agent_id, seq = _SIDECAR_RECORD.unpack_from(body, offset)
        vector = np.frombuffer(body, dtype='<f4', count=dim, offset=offset + _SIDECAR_RECORD.size)
        records[(agent_id, seq)] = vector.astype(np.float64)
    return dim, records


class SyntheticFeatureProvider:
    """
    Local features from projecting fixed 3D landmarks into the ground-truth
    camera. Each landmark carries its own descriptor; per-view noise is
    seeded by (seed, agent, seq).
    """

    def __init__(self, landmarks, pose_of, intrinsics_of, dim=64, seed=0, noise=0.05, max_features=256):
        self.landmarks = np.asarray(landmarks, dtype=np.float64).reshape(-1, 3)
        self.pose_of = pose_of
        self.intrinsics_of = intrinsics_of
        self.dim = dim
        self.seed = seed
        self.noise = noise
        self.max_features = max_features
        rng = np.random.default_rng([seed, 0xFEA7])
        self._descriptors = rng.normal(size=(len(self.landmarks), dim))

    def features(self, agent_id, seq):
        pose = self.pose_of(agent_id, seq)
        intr = self.intrinsics_of(agent_id)
        if pose is None or intr is None or not len(self.landmarks):
            return LocalFeatureSet.empty(self.dim)
        rot = pose.rotation.as_matrix()
        cam = (self.landmarks - pose.translation) @ rot
        z = cam[:, 2]
        front = z > 0.05
        u = np.where(front, intr.fx * cam[:, 0] / np.where(front, z, 1.0) + intr.cx, -1.0)
        v = np.where(front, intr.fy * cam[:, 1] / np.where(front, z, 1.0) + intr.cy, -1.0)
        visible = np.flatnonzero(front & (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height))
        visible = visible[:self.max_features]
        rng = np.random.default_rng([self.seed, agent_id, seq, 0xFEA7])
        desc = self._descriptors[visible] + rng.normal(scale=self.noise, size=(len(visible), self.dim))
        return LocalFeatureSet(np.stack([u[visible], v[visible]], axis=1), desc)

    def __call__(self, frame):
        return self.features(frame.agent_id, frame.seq)


def provider_from_config(config, pose_of=None):
    """Descriptor provider named by a CorrespondenceConfig."""
    if config.provider == 'file':
        return FileDescriptorProvider(config.sidecar)
    if pose_of is None:
        raise ValueError('the synthetic descriptor provider needs ground-truth poses')
    return SyntheticDescriptorProvider(pose_of, dim=config.descriptor_dim)


def best_verified(candidates, feature_lookup, xi, ratio=0.9, limit: Optional[int] = None):
    """
    Verify candidates in order; returns (verified candidate or None, list of
    all checked candidates).
    """
    checked = []
    for candidate in candidates[:limit] if limit else candidates:
        result = verify_candidate(candidate, feature_lookup(candidate.frame_i),
                                  feature_lookup(candidate.frame_j), xi, ratio)
        checked.append(result)
        if result.verified:
            return result, checked
    return None, checked
