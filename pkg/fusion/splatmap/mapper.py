import logging
import threading
import time
from collections import deque

import numpy as np

from ..conf import FusionConfig
from ..exceptions import EmptyBatch
from ..semantics import FeatureField, build_supervision, field_train_step
from .gaussians import GaussianMap, prune, spawn_from_frame
from .optimizer import RefinementState, refined_camera, train_step
from .pool import TrainingPool
from .snapshot import MapSnapshot

logger = logging.getLogger(__name__)


class SplatMapper:
    """
    Owner of the Gaussian map, the training pool, the refinement state and
    the semantic field. Mutation happens in ``ingest`` and ``step`` only;
    ``snapshot`` copies the state for readers.
    """

    def __init__(self, config=None, seed=0):
        self.config = config or FusionConfig()
        self.seed = seed
        self.map = GaussianMap()
        self.pool = TrainingPool()
        self.state = RefinementState()
        fc = self.config.semantics
        self.field = FeatureField.from_config(fc, seed) if fc.enabled else None
        self._spawn_rng = np.random.default_rng([seed, 1])
        self._batch_rng = np.random.default_rng([seed, 2])
        self._field_rng = np.random.default_rng([seed, 3])
        self._lock = threading.RLock()
        self.steps = 0
        self.field_steps = 0
        self.frames_ingested = 0
        self.last_losses = None
        self.last_field_loss = None
        self.ingest_ms = deque(maxlen=1024)
        self.step_ms = deque(maxlen=1024)

    def register_agent(self, agent_id, transform, is_origin=False, metric_depth=False):
        with self._lock:
            if agent_id in self.state:
                logger.warning('agent %s is already registered with the mapper', agent_id)
                return self.state.agents[agent_id]
            self.pool.admit(agent_id)
            return self.state.add_agent(agent_id, transform, is_origin, metric_depth)

    def ingest(self, frame):
        """Spawn Gaussians from an aligned frame and add it to the pool."""
        started = time.perf_counter()
        with self._lock:
            model = self.state.agents.get(frame.agent_id)
            if model is None:
                raise ValueError(f'frame {frame.frame_id} belongs to an agent the mapper does not know')
            spawned = spawn_from_frame(
                frame, model.refined_transform, self.config.pool.spawn_per_frame, self._spawn_rng,
                metric_depth=model.metric_depth, initial_opacity=self.config.renderer.initial_opacity,
            )
            self.map.extend(spawned)
            self.pool.add(frame)
            self.frames_ingested += 1
        self.ingest_ms.append(1000.0 * (time.perf_counter() - started))
        return len(spawned)

    def step(self):
        """One optimiser step, plus a field step on its cadence. None when idle."""
        if not len(self.pool) or not len(self.map):
            return None
        started = time.perf_counter()
        cfg = self.config
        with self._lock:
            losses = train_step(self.map, self.pool, self.state, cfg.optimizer, cfg.renderer,
                                cfg.pool.batch_size, self._batch_rng)
            self.steps += 1
            prune(self.map, cfg.optimizer.prune_alpha_min)
            if self.field is not None and cfg.semantics.every and self.steps % cfg.semantics.every == 0:
                self.field_step()
        self.step_ms.append(1000.0 * (time.perf_counter() - started))
        self.last_losses = losses
        return losses

    def field_step(self):
        labelled = [e for e in self.pool if e.frame.semantic is not None]
        if self.field is None or not labelled or not len(self.map):
            return None
        fc = self.config.semantics
        entry = labelled[self._field_rng.integers(len(labelled))]
        with self._lock:
            points = build_supervision(self.map, entry.frame, self.camera_for(entry), fc.alpha_cutoff,
                                       self.config.renderer.z_near, self.config.renderer.cutoff_sigmas)
            if len(points) > fc.points_per_step:
                points = points.subset(self._field_rng.choice(len(points), fc.points_per_step, replace=False))
            try:
                loss = field_train_step(self.field, points, fc.lr)
            except EmptyBatch:
                return None
            self.field_steps += 1
        self.last_field_loss = loss
        return loss

    def camera_for(self, entry):
        return refined_camera(entry, self.state).camera

    def snapshot(self):
        with self._lock:
            return MapSnapshot(
                self.map.copy(), self.state.transforms(),
                self.field.copy() if self.field is not None else None, self.steps,
            )

    def timing(self):
        def mean(values):
            return float(np.mean(values)) if values else 0.0
        return {'ingest_ms': mean(self.ingest_ms), 'step_ms': mean(self.step_ms)}
