"""
Map and render export: binary PLY point clouds and PNG images.
"""

import logging

import numpy as np
from PIL import Image
from plyfile import PlyData, PlyElement

logger = logging.getLogger(__name__)

PLY_VERTEX_DTYPE = [
    ('x', 'f4'), ('y', 'f4'), ('z', 'f4'),
    ('red', 'u1'), ('green', 'u1'), ('blue', 'u1'),
    ('opacity', 'f4'), ('sigma', 'f4'), ('agent', 'i4'),
]


def to_uint8(image):
    return np.clip(np.round(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_ply(gmap, path):
    """One vertex per Gaussian with colour, opacity, sigma and source agent."""
    vertices = np.empty(len(gmap), dtype=PLY_VERTEX_DTYPE)
    vertices['x'], vertices['y'], vertices['z'] = gmap.means.T
    rgb = to_uint8(gmap.color)
    vertices['red'], vertices['green'], vertices['blue'] = rgb.T
    vertices['opacity'] = gmap.opacity
    vertices['sigma'] = gmap.sigma
    vertices['agent'] = gmap.agent
    PlyData([PlyElement.describe(vertices, 'vertex')], byte_order='<').write(str(path))
    logger.info('wrote %d gaussians to %s', len(gmap), path)
    return len(vertices)


def read_ply(path):
    return PlyData.read(str(path))['vertex'].data


def write_png_rgb(image, path):
    Image.fromarray(to_uint8(image)).save(str(path))


def write_png_depth(depth, path):
    """16-bit PNG in millimetres; 0 marks no coverage."""
    mm = np.clip(np.round(np.asarray(depth, dtype=np.float64) * 1000.0), 0, 65535).astype(np.uint16)
    Image.fromarray(mm).save(str(path))


def read_png(path):
    with Image.open(str(path)) as image:
        return np.array(image)
