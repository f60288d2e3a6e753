"""
Helpers shared by the fusion management commands.
"""

from pathlib import Path

import numpy as np
from django.core.exceptions import ImproperlyConfigured
from django.core.management.base import CommandError

from fusion.conf import load_config
from fusion.exceptions import FormatError
from fusion.semantics import read_field_checkpoint, write_field_checkpoint
from fusion.splatmap.snapshot import MapSnapshot
from fusion.stream.recordings import read_truth
from fusion.stream.scene import SyntheticScene

EXIT_CONFIG = 2
EXIT_BIND = 3


def config_or_exit(path=None):
    try:
        return load_config(path)
    except ImproperlyConfigured as exc:
        raise CommandError(f'configuration error: {exc}', returncode=EXIT_CONFIG) from exc


def field_path(map_path):
    return Path(map_path).with_suffix('.hfld')


def save_snapshot(snapshot, path):
    """Write the map and, when the snapshot carries one, the field next to it."""
    snapshot.save(path)
    if snapshot.field is not None:
        write_field_checkpoint(field_path(path), snapshot.field)


def load_snapshot(path, field=None):
    try:
        snapshot = MapSnapshot.load(path)
        field = field or field_path(path)
        if Path(field).exists():
            snapshot.field = read_field_checkpoint(field)
    except (FormatError, OSError) as exc:
        raise CommandError(str(exc)) from exc
    return snapshot


def load_truth(path):
    """(ground-truth document, regenerated scene)."""
    try:
        doc = read_truth(path)
    except FormatError as exc:
        raise CommandError(str(exc)) from exc
    return doc, SyntheticScene.from_truth(doc)


def parse_floats(text, count=None, name='value'):
    try:
        values = np.array([float(v) for v in text.split(',')])
    except ValueError as exc:
        raise CommandError(f'{name} must be comma-separated numbers: {exc}') from exc
    if count is not None and len(values) != count:
        raise CommandError(f'{name} needs {count} values, got {len(values)}')
    return values
