"""Input validation helpers shared by the estimators and the plain functions."""

import numpy as np
from sklearn.utils.validation import check_array


def check_vector(x, size=None, name="x"):
    """Return ``x`` as a finite 1-D float array, optionally checking its length."""
    arr = check_array(np.atleast_1d(np.asarray(x, dtype=float)), ensure_2d=False,
                      ensure_min_samples=0, input_name=name)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if size is not None and arr.shape[0] != size:
        raise ValueError(f"{name} must have length {size}, got {arr.shape[0]}")
    return arr


def check_matrix(a, shape=None, name="a"):
    """Return ``a`` as a finite 2-D float array; ``None`` entries in ``shape`` are free."""
    arr = check_array(np.asarray(a, dtype=float), ensure_min_samples=0,
                      ensure_min_features=0, input_name=name)
    if shape is not None:
        for axis, (want, got) in enumerate(zip(shape, arr.shape)):
            if want is not None and want != got:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape} (axis {axis})")
    return arr


def check_series(a, n_steps, n_cols, name="series"):
    """Time series as (steps, columns); ``n_steps`` is a minimum length."""
    arr = np.asarray(a, dtype=float)
    if arr.size == 0:
        arr = arr.reshape(0, n_cols)
    arr = check_matrix(arr, shape=(None, n_cols), name=name)
    if arr.shape[0] < n_steps:
        raise ValueError(f"{name} has {arr.shape[0]} rows, need at least {n_steps}")
    return arr


def frozen(arr):
    """Read-only view, used for arrays held by immutable model objects."""
    arr = np.array(arr, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr
