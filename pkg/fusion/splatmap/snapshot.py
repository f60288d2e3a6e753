"""
Read-only copy of the map state, and its ``.npz`` file form.
"""

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from ..exceptions import FormatError
from ..geometry import Sim3Transform
from .gaussians import GaussianMap

SNAPSHOT_VERSION = 1


@dataclass(eq=False)
class MapSnapshot:
    gaussians: GaussianMap
    transforms: Dict[int, Sim3Transform] = field(default_factory=dict)
    field: Optional[object] = None
    steps: int = 0

    def __len__(self):
        return len(self.gaussians)

    def save(self, path):
        agents = sorted(self.transforms)
        g = self.gaussians
        with open(path, 'wb') as fh:
            np.savez(
                fh,
                version=np.array(SNAPSHOT_VERSION),
                means=g.means, log_sigma=g.log_sigma, opacity_logit=g.opacity_logit,
                color_logit=g.color_logit, agent=g.agent, seq=g.seq,
                transform_agents=np.array(agents, dtype=np.int64),
                transforms=np.array([self.transforms[a].to_array() for a in agents]).reshape(-1, 8),
                steps=np.array(self.steps),
            )

    @classmethod
    def load(cls, path):
        try:
            with np.load(path) as data:
                if int(data['version']) != SNAPSHOT_VERSION:
                    raise FormatError(f'{path}: unsupported snapshot version {int(data["version"])}')
                gaussians = GaussianMap(data['means'], data['log_sigma'], data['opacity_logit'],
                                        data['color_logit'], data['agent'], data['seq'])
                transforms = {
                    int(a): Sim3Transform.from_array(row)
                    for a, row in zip(data['transform_agents'], data['transforms'])
                }
                steps = int(data['steps'])
        except (KeyError, ValueError, OSError) as exc:
            raise FormatError(f'{path}: not a map snapshot ({exc})') from exc
        return cls(gaussians, transforms, None, steps)
