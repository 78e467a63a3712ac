"""Small input-checking helpers shared by the functional core and estimators."""

import numpy as np

from .exceptions import NumericalError, ShapeError


def as_float_array(x, name="array", ndim=None, last_dim=None):
    """Return ``x`` as a float64 array, checking rank and trailing size."""
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ShapeError(f"{name}: expected {ndim}-d array, got shape {arr.shape}")
    if last_dim is not None and (arr.ndim == 0 or arr.shape[-1] != last_dim):
        raise ShapeError(f"{name}: expected trailing dimension {last_dim}, got shape {arr.shape}")
    return arr


def check_points(points, name="points"):
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ShapeError(f"{name}: expected (N, 3), got {arr.shape}")
    return arr


def check_same_shape(a, b, names=("a", "b"), axes=None):
    sa = a.shape if axes is None else a.shape[axes]
    sb = b.shape if axes is None else b.shape[axes]
    if sa != sb:
        raise ShapeError(f"shape mismatch: {names[0]}{tuple(sa)} vs {names[1]}{tuple(sb)}")


def check_finite(x, stage):
    """NaN/inf guard used at pipeline stage boundaries."""
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite values produced by stage '{stage}'")
    return x
