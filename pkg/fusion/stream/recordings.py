"""
Recorded streams: concatenated wire messages in ``<base>.hamr`` with an
optional descriptor sidecar ``<base>.hdsc``, a label table ``<base>.hlbl``
and, for simulated runs, the ground truth in ``<base>.truth.json``.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path

from ..exceptions import FormatError, TruncatedStream
from ..geometry import Sim3Transform
from .protocol import decode, encode

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RecordingPaths:
    base: Path

    @classmethod
    def of(cls, base):
        base = Path(base)
        if base.suffix == '.hamr':
            base = base.with_suffix('')
        return cls(base)

    def _with(self, suffix):
        return self.base.with_name(self.base.name + suffix)

    @property
    def stream(self):
        return self._with('.hamr')

    @property
    def descriptors(self):
        return self._with('.hdsc')

    @property
    def labels(self):
        return self._with('.hlbl')

    @property
    def truth(self):
        return self._with('.truth.json')


class RecordingWriter:
    """Appends encoded messages to a stream file."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = None
        self.messages = 0
        self.bytes = 0

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, 'wb')
        return self

    def __exit__(self, *exc):
        self._fh.close()
        self._fh = None

    def __call__(self, msg):
        return self.write(msg)

    def write(self, msg):
        data = msg if isinstance(msg, (bytes, bytearray)) else encode(msg)
        self._fh.write(data)
        self.messages += 1
        self.bytes += len(data)
        return len(data)


def read_recording(path):
    """
    Messages of a stream file and whether it ended mid-message. Reading
    stops at the last complete message.
    """
    data = Path(path).read_bytes()
    messages, offset, truncated = [], 0, False
    while offset < len(data):
        try:
            msg, offset = decode(data, offset)
        except TruncatedStream as exc:
            logger.warning('%s: %s after %d messages', path, exc, len(messages))
            truncated = True
            break
        messages.append(msg)
    return messages, truncated


def write_truth(path, truth):
    Path(path).write_text(json.dumps(truth, indent=2, sort_keys=True))


def read_truth(path):
    """
    Ground-truth document with the per-agent transforms decoded; a document
    without transforms gets ``None`` there.
    """
    try:
        doc = json.loads(Path(path).read_text())
        transforms = doc.get('transforms')
        doc['transforms'] = (
            {int(k): Sim3Transform.from_array(v) for k, v in transforms.items()} if transforms is not None else None
        )
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise FormatError(f'{path}: not a ground-truth file ({exc})') from exc
    return doc
