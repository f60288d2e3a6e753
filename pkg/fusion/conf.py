"""
Fusion server configuration.

The configuration file is a flat env file (``KEY=value`` lines) whose keys
are grouped by a section prefix, for example::

    # [solver]
    SOLVER_EPSILON=0.001
    SOLVER_GATE_TRANSLATION_M=0.1

    # [pool]
    POOL_BATCH_SIZE=4

Keys are read with django-environ; every field falls back to the default
written on its dataclass.
"""

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import environ
from django.conf import settings
from django.core.exceptions import ImproperlyConfigured


@dataclass(frozen=True)
class SolverConfig:
    epsilon: float = 1e-3
    max_iterations: int = 50
    gate_translation_m: float = 0.1
    gate_rotation_deg: float = 10.0

    def validate(self):
        if self.epsilon < 0:
            raise ImproperlyConfigured('SOLVER_EPSILON must be non-negative')
        if self.gate_translation_m <= 0 or self.gate_rotation_deg <= 0:
            raise ImproperlyConfigured('solver gates must be positive')


@dataclass(frozen=True)
class CorrespondenceConfig:
    initial_gamma: float = 0.1
    xi: float = 0.25
    ratio_test: float = 0.9
    cadence_s: float = 2.0
    max_verifications: int = 8
    descriptor_dim: int = 64
    provider: str = 'synthetic'
    sidecar: Optional[str] = None

    def validate(self):
        if not -1.0 <= self.initial_gamma <= 1.0:
            raise ImproperlyConfigured('CORRESPONDENCE_INITIAL_GAMMA must lie in [-1, 1]')
        if not 0.0 <= self.xi <= 1.0:
            raise ImproperlyConfigured('CORRESPONDENCE_XI must lie in [0, 1]')
        if self.provider not in ('synthetic', 'file'):
            raise ImproperlyConfigured(f'unknown descriptor provider {self.provider!r}')
        if self.provider == 'file' and not self.sidecar:
            raise ImproperlyConfigured('CORRESPONDENCE_SIDECAR is required for the file provider')


@dataclass(frozen=True)
class AlignmentConfig:
    window: int = 16
    cache_cap: int = 10_000
    sfm_sigma_t: float = 0.0
    sfm_sigma_r_deg: float = 0.0
    sfm_p_drop: float = 0.0
    sfm_seed: int = 0

    def validate(self):
        if self.window < 1:
            raise ImproperlyConfigured('ALIGNMENT_WINDOW must be at least 1')
        if not 0.0 <= self.sfm_p_drop <= 1.0:
            raise ImproperlyConfigured('ALIGNMENT_SFM_P_DROP must lie in [0, 1]')


@dataclass(frozen=True)
class PoolConfig:
    batch_size: int = 4
    spawn_per_frame: int = 1024
    holdout_every: int = 10
    queue_cap: int = 256

    def validate(self):
        if self.batch_size < 1 or self.spawn_per_frame < 1:
            raise ImproperlyConfigured('POOL_BATCH_SIZE and POOL_SPAWN_PER_FRAME must be positive')
        if self.holdout_every < 0:
            raise ImproperlyConfigured('POOL_HOLDOUT_EVERY must be non-negative (0 disables)')


@dataclass(frozen=True)
class RendererConfig:
    z_near: float = 0.05
    cutoff_sigmas: float = 3.0
    initial_opacity: float = 0.3


@dataclass(frozen=True)
class OptimizerConfig:
    depth_weight: float = 0.2
    beta_t: float = 10.0
    beta_r: float = 10.0
    beta_s: float = 10.0
    lr_means: float = 1e-3
    lr_sigma: float = 1.0
    lr_opacity: float = 20.0
    lr_color: float = 200.0
    lr_pose_rotation: float = 1e-4
    lr_pose_translation: float = 1e-4
    lr_correction: float = 1e-5
    lr_affine: float = 0.05
    prune_alpha_min: float = 0.0
    steps_per_frame: int = 1

    @property
    def learning_rates(self):
        return {
            'means': self.lr_means,
            'log_sigma': self.lr_sigma,
            'opacity_logit': self.lr_opacity,
            'color_logit': self.lr_color,
            'pose_rotation': self.lr_pose_rotation,
            'pose_translation': self.lr_pose_translation,
            'correction': self.lr_correction,
            'affine': self.lr_affine,
        }

    def scaled(self, factor):
        """Copy with every learning rate multiplied by ``factor``."""
        return dataclasses.replace(self, **{
            f'lr_{name}': getattr(self, f'lr_{name}') * factor
            for name in ('means', 'sigma', 'opacity', 'color', 'pose_rotation',
                         'pose_translation', 'correction', 'affine')
        })


@dataclass(frozen=True)
class FieldConfig:
    enabled: bool = True
    dim: int = 16
    levels: int = 4
    features: int = 4
    table_size: int = 2 ** 16
    base_resolution: int = 16
    hidden: int = 32
    init_scale: float = 0.5
    lr: float = 1e-2
    every: int = 4
    points_per_step: int = 512
    alpha_cutoff: float = 0.5
    bbox_min: Tuple[float, float, float] = (-1.5, -1.5, -0.5)
    bbox_max: Tuple[float, float, float] = (1.5, 1.5, 1.5)

    def validate(self):
        if self.table_size & (self.table_size - 1):
            raise ImproperlyConfigured('FIELD_TABLE_SIZE must be a power of two')
        if any(lo >= hi for lo, hi in zip(self.bbox_min, self.bbox_max)):
            raise ImproperlyConfigured('FIELD_BBOX_MIN must be below FIELD_BBOX_MAX')


@dataclass(frozen=True)
class SimulatorConfig:
    seed: int = 0
    agents: int = 3
    width: int = 64
    height: int = 64
    rate_hz: float = 10.0
    seconds: float = 10.0
    stagger_s: float = 2.0
    gaussians: int = 1500
    objects: int = 10
    payloads: Tuple[str, ...] = ('depth', 'depth', 'points')
    semantic: bool = True
    scale_range: Tuple[float, float] = (0.5, 2.0)
    isp_strength: float = 0.0
    max_points: int = 2048

    def validate(self):
        if self.agents < 1:
            raise ImproperlyConfigured('SIM_AGENTS must be at least 1')
        if self.objects < 0:
            raise ImproperlyConfigured('SIM_OBJECTS cannot be negative')
        if not self.payloads:
            raise ImproperlyConfigured('SIM_PAYLOADS needs at least one payload kind')
        if any(p not in ('depth', 'points') for p in self.payloads):
            raise ImproperlyConfigured(f'SIM_PAYLOADS entries must be depth or points, got {self.payloads}')
        if self.rate_hz <= 0 or self.seconds <= 0:
            raise ImproperlyConfigured('SIM_RATE_HZ and SIM_SECONDS must be positive')


@dataclass(frozen=True)
class ServerConfig:
    bind: str = '127.0.0.1:7878'
    stats_interval_s: float = 5.0
    read_timeout_s: float = 30.0


@dataclass(frozen=True)
class FusionConfig:
    server: ServerConfig = field(default_factory=ServerConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    correspondence: CorrespondenceConfig = field(default_factory=CorrespondenceConfig)
    alignment: AlignmentConfig = field(default_factory=AlignmentConfig)
    pool: PoolConfig = field(default_factory=PoolConfig)
    renderer: RendererConfig = field(default_factory=RendererConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    semantics: FieldConfig = field(default_factory=FieldConfig)
    simulator: SimulatorConfig = field(default_factory=SimulatorConfig)

    SECTIONS = {
        'server': ('SERVER', ServerConfig),
        'solver': ('SOLVER', SolverConfig),
        'correspondence': ('CORRESPONDENCE', CorrespondenceConfig),
        'alignment': ('ALIGNMENT', AlignmentConfig),
        'pool': ('POOL', PoolConfig),
        'renderer': ('RENDERER', RendererConfig),
        'optimizer': ('OPTIMIZER', OptimizerConfig),
        'semantics': ('FIELD', FieldConfig),
        'simulator': ('SIM', SimulatorConfig),
    }

    def validate(self):
        for name in self.SECTIONS:
            section = getattr(self, name)
            if hasattr(section, 'validate'):
                section.validate()
        return self

    def with_section(self, name, **changes):
        return dataclasses.replace(self, **{name: dataclasses.replace(getattr(self, name), **changes)})

    @classmethod
    def from_env(cls, env=None):
        env = env if env is not None else environ.Env()
        sections = {}
        for name, (prefix, section_cls) in cls.SECTIONS.items():
            values = {}
            for item in dataclasses.fields(section_cls):
                key = f'{prefix}_{item.name.upper()}'
                if key not in env.ENVIRON:
                    continue
                values[item.name] = _read(env, key, item)
            try:
                sections[name] = section_cls(**values)
            except (TypeError, ValueError) as exc:
                raise ImproperlyConfigured(f'invalid [{name}] section: {exc}') from exc
        return cls(**sections).validate()

    @classmethod
    def from_file(cls, path):
        """
        Read an env file on top of a copy of the process environment; the
        file's keys win, ``os.environ`` itself is left as it was.
        """
        path = Path(path)
        if not path.is_file():
            raise ImproperlyConfigured(f'config file {path} does not exist')
        # read_env writes into the class-level ENVIRON, so give it a private one
        file_env = type('FileEnv', (environ.Env,), {'ENVIRON': dict(os.environ)})
        try:
            file_env.read_env(str(path), overwrite=True)
        except (OSError, UnicodeDecodeError) as exc:
            raise ImproperlyConfigured(f'cannot read config file {path}: {exc}') from exc
        return cls.from_env(file_env())


def _read(env, key, item):
    default = item.default
    try:
        if isinstance(default, bool):
            return env.bool(key)
        if isinstance(default, int):
            return env.int(key)
        if isinstance(default, float):
            return env.float(key)
        if isinstance(default, tuple):
            raw = env.list(key)
            if default and isinstance(default[0], (int, float)):
                return tuple(type(default[0])(v) for v in raw)
            return tuple(raw)
        return env.str(key)
    except (ValueError, TypeError) as exc:
        raise ImproperlyConfigured(f'{key}: {exc}') from exc


def load_config(path=None):
    """Configuration from ``path``, HAMR_CONFIG_FILE or the bare environment."""
    path = path or getattr(settings, 'HAMR_CONFIG_FILE', None)
    if path:
        return FusionConfig.from_file(path)
    return FusionConfig.from_env()
