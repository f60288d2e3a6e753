"""
Semantic feature field over global 3D space.

Positions are encoded by L levels of hashed voxel grids (resolution
``base * 2**level``), each corner feature fetched from a table of T_h
entries through the spatial hash

    h(x, y, z) = (x * 1) ^ (y * 2654435761) ^ (z * 805459861)  mod T_h

in unsigned 64-bit arithmetic, trilinearly interpolated and concatenated.
A two-layer perceptron (tanh hidden layer, linear output) maps the L*F
encoding to a d_s-dimensional embedding.

The field is supervised by labelled point clouds obtained by lifting the
rendered depth of a frame into 3D and pairing each point with the frame's
per-pixel semantic vector; the map is only read while doing so.
"""

import logging
import struct
from dataclasses import dataclass

import numpy as np

from .exceptions import EmptyBatch, FormatError, NoSemanticPayload
from .splatmap.renderer import render

logger = logging.getLogger(__name__)

HASH_PRIMES = np.array([1, 2654435761, 805459861], dtype=np.uint64)

CHECKPOINT_MAGIC = b'HFLD'
CHECKPOINT_VERSION = 1
_CHECKPOINT_HEADER = struct.Struct('<4sHHHHIII')

# parameters are held at checkpoint precision
PARAM_DTYPE = np.float32

LABELS_MAGIC = b'HLBL'
LABELS_VERSION = 1
_LABELS_HEADER = struct.Struct('<4sHH')

_CORNERS = np.array([[a, b, c] for a in (0, 1) for b in (0, 1) for c in (0, 1)], dtype=np.int64)


def spatial_hash(coords, table_size):
    coords = np.asarray(coords, dtype=np.int64).astype(np.uint64)
    h = coords[..., 0] * HASH_PRIMES[0]
    h ^= coords[..., 1] * HASH_PRIMES[1]
    h ^= coords[..., 2] * HASH_PRIMES[2]
    return (h & np.uint64(table_size - 1)).astype(np.int64)


class FeatureField:

    def __init__(self, dim=16, levels=4, features=4, table_size=2 ** 16, base_resolution=16,
                 hidden=32, bbox_min=(-1.5, -1.5, -0.5), bbox_max=(1.5, 1.5, 1.5), init_scale=0.5, seed=0):
        if table_size & (table_size - 1):
            raise ValueError('table size must be a power of two')
        self.dim = dim
        self.levels = levels
        self.features = features
        self.table_size = table_size
        self.base_resolution = base_resolution
        self.hidden = hidden
        self.bbox_min = np.asarray(bbox_min, dtype=PARAM_DTYPE)
        self.bbox_max = np.asarray(bbox_max, dtype=PARAM_DTYPE)
        rng = np.random.default_rng([seed, 0xF1E1D])
        in_dim = levels * features
        self.grids = rng.uniform(-init_scale, init_scale, size=(levels, table_size, features))
        self.w1 = rng.uniform(-1.0, 1.0, size=(in_dim, hidden)) / np.sqrt(in_dim)
        self.b1 = np.zeros(hidden)
        bound = 0.5 / np.sqrt(hidden)
        self.w2 = rng.uniform(-bound, bound, size=(hidden, dim))
        self.b2 = np.zeros(dim)
        for name in self.PARAMETERS:
            setattr(self, name, getattr(self, name).astype(PARAM_DTYPE))

    @classmethod
    def from_config(cls, config, seed=0):
        return cls(config.dim, config.levels, config.features, config.table_size, config.base_resolution,
                   config.hidden, config.bbox_min, config.bbox_max, config.init_scale, seed)

    PARAMETERS = ('grids', 'w1', 'b1', 'w2', 'b2')

    def parameters(self):
        return {name: getattr(self, name) for name in self.PARAMETERS}

    def copy(self):
        other = object.__new__(FeatureField)
        other.__dict__.update({k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()})
        return other

    def equals(self, other):
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in self.PARAMETERS)

    def resolution(self, level):
        return self.base_resolution * 2 ** level

    def _lookup(self, x):
        x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
        unit = (np.clip(x, self.bbox_min, self.bbox_max) - self.bbox_min) / (self.bbox_max - self.bbox_min)
        indices, weights = [], []
        for level in range(self.levels):
            pos = unit * self.resolution(level)
            cell = np.floor(pos)
            frac = pos - cell
            corners = cell.astype(np.int64)[:, None, :] + _CORNERS[None]
            w = np.where(_CORNERS[None] == 1, frac[:, None, :], 1.0 - frac[:, None, :]).prod(axis=2)
            indices.append(spatial_hash(corners, self.table_size))
            weights.append(w)
        return indices, weights

    def _forward(self, x):
        indices, weights = self._lookup(x)
        encoding = np.concatenate([
            np.einsum('pc,pcf->pf', weights[level], self.grids[level][indices[level]])
            for level in range(self.levels)
        ], axis=1)
        hidden = np.tanh(encoding @ self.w1 + self.b1)
        out = hidden @ self.w2 + self.b2
        return out, (indices, weights, encoding, hidden)

    def __call__(self, x):
        return self._forward(x)[0]

    def _backward(self, cache, g_out):
        indices, weights, encoding, hidden = cache
        grads = {
            'w2': hidden.T @ g_out,
            'b2': g_out.sum(axis=0),
        }
        g_pre = (g_out @ self.w2.T) * (1.0 - hidden * hidden)
        grads['w1'] = encoding.T @ g_pre
        grads['b1'] = g_pre.sum(axis=0)
        g_enc = g_pre @ self.w1.T
        g_grids = np.zeros(self.grids.shape)
        f = self.features
        for level in range(self.levels):
            g_level = g_enc[:, level * f:(level + 1) * f]
            contrib = weights[level][:, :, None] * g_level[:, None, :]
            np.add.at(g_grids[level], indices[level].reshape(-1), contrib.reshape(-1, f))
        grads['grids'] = g_grids
        return grads

    def loss_and_gradients(self, points):
        """Mean cosine distance to the targets and its parameter gradients."""
        out, cache = self._forward(points.positions)
        targets = points.targets
        norm_o = np.maximum(np.linalg.norm(out, axis=1), 1e-12)
        norm_t = np.maximum(np.linalg.norm(targets, axis=1), 1e-12)
        cos = np.einsum('ij,ij->i', out, targets) / (norm_o * norm_t)
        count = len(out)
        g_out = -(targets / (norm_o * norm_t)[:, None] - cos[:, None] * out / (norm_o ** 2)[:, None]) / count
        return float(np.mean(1.0 - cos)), self._backward(cache, g_out)

    def save(self, path):
        write_field_checkpoint(path, self)

    @classmethod
    def load(cls, path):
        return read_field_checkpoint(path)


def field_eval(field, x):
    """Embedding at ``x``; a single 3-vector gives a d_s-vector."""
    x = np.asarray(x, dtype=np.float64)
    out = field(x)
    return out[0] if x.ndim == 1 else out


@dataclass(frozen=True)
class LabeledPoint:
    position: np.ndarray
    target: np.ndarray


class LabeledPointSet:
    """Positions (P, 3) and unit-norm targets (P, d_s)."""

    def __init__(self, positions, targets):
        self.positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        targets = np.asarray(targets, dtype=np.float64).reshape(len(self.positions), -1)
        norms = np.linalg.norm(targets, axis=1, keepdims=True)
        self.targets = targets / np.maximum(norms, 1e-12)

    @classmethod
    def from_points(cls, points):
        points = list(points)
        if not points:
            return cls(np.zeros((0, 3)), np.zeros((0, 1)))
        return cls(np.stack([p.position for p in points]), np.stack([p.target for p in points]))

    def __len__(self):
        return len(self.positions)

    def __iter__(self):
        for position, target in zip(self.positions, self.targets):
            yield LabeledPoint(position, target)

    def subset(self, index):
        return LabeledPointSet(self.positions[index], self.targets[index])


def build_supervision(gmap, frame, camera, alpha_cutoff=0.5, z_near=0.05, cutoff=3.0):
    """
    Lift pixels the map covers (rendered alpha above ``alpha_cutoff``) to 3D
    at the rendered depth and pair them with the frame's semantic vectors.
    Background pixels (zero vector) are skipped.
    """
    if frame.semantic is None:
        raise NoSemanticPayload(f'frame {frame.frame_id} has no semantic image')
    semantic = np.asarray(frame.semantic, dtype=np.float64)
    result = render(gmap, camera, z_near, cutoff)
    covered = (result.alpha > alpha_cutoff) & (np.linalg.norm(semantic, axis=2) > 0)
    v, u = np.nonzero(covered)
    if not len(v):
        return LabeledPointSet(np.zeros((0, 3)), np.zeros((0, semantic.shape[2])))
    local = camera.intrinsics.unproject(u, v, result.depth[v, u])
    positions = local @ camera.rotation.T + camera.center
    return LabeledPointSet(positions, semantic[v, u])


def field_train_step(field, points, lr):
    """One SGD step on the cosine loss; returns the loss before the step."""
    if not isinstance(points, LabeledPointSet):
        points = LabeledPointSet.from_points(points)
    if not len(points):
        raise EmptyBatch('no labeled points to train the field on')
    loss, grads = field.loss_and_gradients(points)
    if lr:
        for name, grad in grads.items():
            getattr(field, name)[...] -= lr * grad
    return loss


def query(gmap, field, embedding, top_k):
    """
    Gaussians ranked by cosine similarity between the field at their means
    and ``embedding``; ties go to the lower index.
    """
    if top_k <= 0 or not len(gmap):
        return []
    embedding = np.asarray(embedding, dtype=np.float64).reshape(-1)
    unit = embedding / max(np.linalg.norm(embedding), 1e-12)
    out = field(gmap.means)
    scores = (out @ unit) / np.maximum(np.linalg.norm(out, axis=1), 1e-12)
    order = np.lexsort((np.arange(len(scores)), -scores))[:top_k]
    return [(int(i), float(scores[i])) for i in order]


def write_field_checkpoint(path, field):
    with open(path, 'wb') as fh:
        fh.write(_CHECKPOINT_HEADER.pack(
            CHECKPOINT_MAGIC, CHECKPOINT_VERSION, field.dim, field.levels, field.features,
            field.table_size, field.base_resolution, field.hidden,
        ))
        for block in (np.concatenate([field.bbox_min, field.bbox_max]),) + tuple(
                getattr(field, n) for n in FeatureField.PARAMETERS):
            fh.write(np.asarray(block, dtype='<f4').tobytes())


def read_field_checkpoint(path):
    with open(path, 'rb') as fh:
        data = fh.read()
    if len(data) < _CHECKPOINT_HEADER.size:
        raise FormatError(f'{path}: field checkpoint header truncated')
    magic, version, dim, levels, features, table_size, base, hidden = _CHECKPOINT_HEADER.unpack_from(data)
    if magic != CHECKPOINT_MAGIC or version != CHECKPOINT_VERSION:
        raise FormatError(f'{path}: not a version {CHECKPOINT_VERSION} field checkpoint')
    field = FeatureField(dim, levels, features, table_size, base, hidden, init_scale=0.0)
    shapes = [(6,)] + [getattr(field, n).shape for n in FeatureField.PARAMETERS]
    expected = _CHECKPOINT_HEADER.size + 4 * sum(int(np.prod(s)) for s in shapes)
    if len(data) != expected:
        raise FormatError(f'{path}: field checkpoint has {len(data)} bytes, expected {expected}')
    offset = _CHECKPOINT_HEADER.size
    blocks = []
    for shape in shapes:
        count = int(np.prod(shape))
        blocks.append(np.frombuffer(data, dtype='<f4', count=count, offset=offset).astype(PARAM_DTYPE).reshape(shape))
        offset += 4 * count
    field.bbox_min, field.bbox_max = blocks[0][:3].copy(), blocks[0][3:].copy()
    for name, block in zip(FeatureField.PARAMETERS, blocks[1:]):
        setattr(field, name, block)
    return field


def write_label_table(path, labels):
    """``labels`` maps a label string to its d_s embedding."""
    labels = dict(labels)
    dim = len(next(iter(labels.values()))) if labels else 0
    with open(path, 'wb') as fh:
        fh.write(_LABELS_HEADER.pack(LABELS_MAGIC, LABELS_VERSION, dim))
        for name, vector in labels.items():
            raw = name.encode('utf-8')
            fh.write(struct.pack('<H', len(raw)))
            fh.write(raw)
            fh.write(np.asarray(vector, dtype='<f4').reshape(dim).tobytes())


def read_label_table(path):
    with open(path, 'rb') as fh:
        data = fh.read()
    if len(data) < _LABELS_HEADER.size:
        raise FormatError(f'{path}: label table header truncated')
    magic, version, dim = _LABELS_HEADER.unpack_from(data)
    if magic != LABELS_MAGIC or version != LABELS_VERSION:
        raise FormatError(f'{path}: not a version {LABELS_VERSION} label table')
    labels = {}
    offset = _LABELS_HEADER.size
    while offset < len(data):
        if offset + 2 > len(data):
            raise FormatError(f'{path}: label record truncated')
        (length,) = struct.unpack_from('<H', data, offset)
        offset += 2
        end = offset + length + 4 * dim
        if end > len(data):
            raise FormatError(f'{path}: label record truncated')
        name = data[offset:offset + length].decode('utf-8')
        labels[name] = np.frombuffer(data, dtype='<f4', count=dim, offset=offset + length).astype(np.float64)
        offset = end
    return labels
