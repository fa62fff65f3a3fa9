"""Input coercion shared by the estimator wrappers and the CLI."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .dynamics import DynamicsModel, make_model
from .exceptions import SpecificationError
from .geometry import HyperBox
from .network import ReluMlp, load_model


def check_network(network) -> ReluMlp:
    """Accept a ReluMlp, its dict form or a path to a model file."""
    if isinstance(network, ReluMlp):
        return network
    if isinstance(network, dict):
        return ReluMlp.from_dict(network)
    if isinstance(network, (str, Path)):
        return load_model(network)
    raise SpecificationError(f"expected a ReluMlp, dict or path, got {type(network).__name__}")


def check_dynamics(dynamics) -> DynamicsModel:
    """Accept a DynamicsModel instance or a built-in model name."""
    if isinstance(dynamics, DynamicsModel):
        return dynamics
    if isinstance(dynamics, str):
        return make_model(dynamics)
    raise SpecificationError(f"expected a DynamicsModel or model name, got {type(dynamics).__name__}")


def check_box(X, n_dims=None) -> HyperBox:
    """A single box from a HyperBox or a ``(2, n)`` array of lower/upper rows."""
    if isinstance(X, HyperBox):
        box = X
    else:
        arr = np.asarray(X, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != 2:
            raise SpecificationError(f"expected a (2, n) array of bounds, got shape {arr.shape}")
        box = HyperBox(arr[0], arr[1])
    if n_dims is not None and box.dims != n_dims:
        raise SpecificationError(f"box is {box.dims}-D, expected {n_dims}-D")
    return box


def check_boxes(X, n_dims=None) -> np.ndarray:
    """Stack of boxes as a ``(K, 2, n)`` float array.

    Accepts a BoundarySet, a sequence of HyperBox, a ``(K, 2, n)`` array or a
    ``(K, 2n)`` array with the lower bounds first.
    """
    from .verifier import BoundarySet

    if isinstance(X, BoundarySet):
        X = list(X.boxes)
    if isinstance(X, (list, tuple)) and X and all(isinstance(b, HyperBox) for b in X):
        arr = np.stack([np.stack([b.lower, b.upper]) for b in X])
    else:
        arr = np.asarray(X, dtype=float)
        if arr.ndim == 2 and arr.shape[1] % 2 == 0 and arr.shape[0] > 0:
            half = arr.shape[1] // 2
            arr = np.stack([arr[:, :half], arr[:, half:]], axis=1)
        elif arr.size == 0:
            arr = arr.reshape(0, 2, n_dims or 0)
    if arr.ndim != 3 or arr.shape[1] != 2:
        raise SpecificationError(f"expected boxes of shape (K, 2, n), got {arr.shape}")
    if n_dims is not None and arr.shape[2] != n_dims:
        raise SpecificationError(f"boxes are {arr.shape[2]}-D, expected {n_dims}-D")
    if not np.all(np.isfinite(arr)):
        raise SpecificationError("box bounds must be finite")
    if np.any(arr[:, 0] > arr[:, 1]):
        raise SpecificationError("a box has lower bound above its upper bound")
    return arr


def boxes_from_array(arr: np.ndarray) -> list:
    return [HyperBox(b[0], b[1]) for b in arr]
