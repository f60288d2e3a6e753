"""
Training pool of aligned frames, sampled with a bias towards frames that
have been seen least.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import EmptyPool

logger = logging.getLogger(__name__)

MIN_DETERMINANT = 1e-3


@dataclass(eq=False)
class AffineColor:
    """Per-image colour correction x -> A x + b, applied to rendered RGB."""
    matrix: np.ndarray = field(default_factory=lambda: np.eye(3))
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def apply(self, image):
        image = np.asarray(image, dtype=np.float64)
        flat = image.reshape(-1, 3) @ self.matrix.T + self.offset
        return flat.reshape(image.shape)

    def project(self):
        """Restore det(A) > 0 after an update."""
        if np.linalg.det(self.matrix) > MIN_DETERMINANT:
            return False
        u, s, vt = np.linalg.svd(self.matrix)
        s = np.maximum(s, MIN_DETERMINANT)
        s[-1] *= np.sign(np.linalg.det(u @ vt)) or 1.0
        self.matrix = u @ np.diag(s) @ vt
        return True

    def is_identity(self, atol=1e-12):
        return np.allclose(self.matrix, np.eye(3), atol=atol, rtol=0) and np.allclose(self.offset, 0, atol=atol, rtol=0)


@dataclass(eq=False)
class PoolEntry:
    frame: object
    rotation_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    translation_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    appearance: AffineColor = field(default_factory=AffineColor)

    @property
    def sample_count(self):
        return self.frame.sample_count

    @property
    def agent_id(self):
        return self.frame.agent_id


class TrainingPool:

    def __init__(self):
        self.entries = []
        self.aligned_agents = set()

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def admit(self, agent_id):
        self.aligned_agents.add(agent_id)

    def add(self, frame):
        if frame.agent_id not in self.aligned_agents:
            raise ValueError(f'agent {frame.agent_id} is not aligned, its frames cannot train the map')
        entry = PoolEntry(frame)
        self.entries.append(entry)
        return entry

    def sample_counts(self):
        return np.array([e.frame.sample_count for e in self.entries], dtype=np.int64)

    def probabilities(self):
        weights = 1.0 / (1.0 + self.sample_counts())
        return weights / weights.sum()

    def sample_batch(self, n, rng, record=True):
        """
        Up to ``n`` distinct entries drawn with probability proportional to
        1 / (1 + sample_count). Drawn frames have their count incremented
        unless ``record`` is false.
        """
        if not self.entries:
            raise EmptyPool('the training pool is empty')
        rng = np.random.default_rng(rng)
        size = min(n, len(self.entries))
        picks = rng.choice(len(self.entries), size=size, replace=False, p=self.probabilities())
        batch = [self.entries[i] for i in picks]
        if record:
            for entry in batch:
                entry.frame.sample_count += 1
        return batch

    def by_agent(self):
        out = {}
        for entry in self.entries:
            out.setdefault(entry.agent_id, []).append(entry)
        return out
