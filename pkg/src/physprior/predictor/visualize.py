"""Channel-mean maps of the spatial memory."""

import numpy as np

from ..autodiff import Tensor
from ..dataset import foreground_mask
from ..raster import write_ppm


def hidden_map(h):
    """Mean over channels of an ``n x m x C`` (or ``1 x n x m x C``) hidden state."""
    h = h.data if isinstance(h, Tensor) else np.asarray(h)
    if h.ndim == 4:
        h = h[0]
    if h.ndim != 3:
        raise ValueError(f"expected an n x m x C hidden state, got shape {h.shape}")
    return h.astype(np.float64).mean(axis=-1)


def visualize_hidden(h):
    """Min-max normalised channel mean as a gray ``n x m x 3`` uint8 image.

    A constant map has no range; it is treated as all zeros and shown at
    the midpoint gray 128.
    """
    m = hidden_map(h)
    lo, hi = m.min(), m.max()
    if hi - lo <= 0:
        gray = np.full(m.shape, 128, dtype=np.uint8)
    else:
        gray = np.round(255.0 * (m - lo) / (hi - lo)).astype(np.uint8)
    return np.repeat(gray[..., None], 3, axis=-1)


def save_hidden_ppm(h, path):
    write_ppm(visualize_hidden(h), path)


def downsample_mask(mask, factor=2):
    """A coarse cell is set when any of its ``factor x factor`` pixels is."""
    h, w = mask.shape
    return mask[:h - h % factor, :w - w % factor].reshape(h // factor, factor, w // factor, factor).any(axis=(1, 3))


def object_activation_contrast(h, frame):
    """Mean hidden activation on object cells minus that on background cells."""
    cells = downsample_mask(foreground_mask(frame), 2)
    m = hidden_map(h)
    if cells.shape != m.shape:
        raise ValueError(f"frame grid {cells.shape} does not match hidden grid {m.shape}")
    if cells.all() or not cells.any():
        raise ValueError("frame needs both object and background cells")
    return float(m[cells].mean() - m[~cells].mean())
