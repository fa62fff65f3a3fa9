"""Constant bounds on the input gradient of a ReLU network over a box.

The gradient of a ReLU network is piecewise constant, so bounds that are
affine in ``x`` have zero slope: only the offsets ``d_lo <= grad <= d_hi``
are stored.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import SpecificationError
from .geometry import HyperBox, interval_matvec_arrays, uniform_split
from .network import ReluMlp
from .relaxation import NeuronStatus, PreactivationBounds, neuron_status, preactivation_arrays

DEFAULT_REFINE = 1


@dataclass(frozen=True)
class GradientBounds:
    d_lo: np.ndarray
    d_hi: np.ndarray
    box: Optional[HyperBox] = None

    def __post_init__(self):
        d_lo = np.asarray(self.d_lo, dtype=float).reshape(-1)
        d_hi = np.asarray(self.d_hi, dtype=float).reshape(-1)
        if d_lo.shape != d_hi.shape:
            raise SpecificationError("gradient bound vectors differ in length")
        if np.any(d_lo > d_hi):
            raise SpecificationError("gradient lower bound exceeds upper bound")
        object.__setattr__(self, "d_lo", d_lo)
        object.__setattr__(self, "d_hi", d_hi)

    @property
    def midpoint(self) -> np.ndarray:
        return (self.d_lo + self.d_hi) / 2

    def contains(self, grad, tol: float = 0.0) -> bool:
        grad = np.asarray(grad)
        return bool(np.all(grad >= self.d_lo - tol) and np.all(grad <= self.d_hi + tol))

    def to_dict(self) -> dict:
        return {"d_lo": self.d_lo.tolist(), "d_hi": self.d_hi.tolist()}


def _backward_gradient_intervals(net: ReluMlp, pre_lo, pre_hi, statuses=None):
    """Interval back-propagation of the chain rule; arrays carry a batch axis."""
    if statuses is None:
        statuses = [neuron_status(lo, hi) for lo, hi in zip(pre_lo, pre_hi)]
    batch = statuses[0].shape[:-1] if statuses else ()
    last = net.weights[-1][0]
    g_lo = np.broadcast_to(last, batch + last.shape).astype(float)
    g_hi = g_lo.copy()
    for i in range(net.n_layers - 2, -1, -1):
        status = statuses[i]
        off = status == NeuronStatus.INACTIVE
        uns = status == NeuronStatus.UNSTABLE
        g_lo = np.where(off, 0.0, np.where(uns, np.minimum(g_lo, 0.0), g_lo))
        g_hi = np.where(off, 0.0, np.where(uns, np.maximum(g_hi, 0.0), g_hi))
        g_lo, g_hi = interval_matvec_arrays(net.weights[i].T, g_lo, g_hi)
    return g_lo, g_hi


def interval_gradient_bounds(net: ReluMlp, pre: PreactivationBounds,
                             box: Optional[HyperBox] = None) -> GradientBounds:
    """Gradient bounds from a single set of pre-activation intervals.

    Each ReLU derivative is {1} for active, {0} for inactive and [0, 1] for
    unstable neurons; affine layers are crossed with interval arithmetic.
    """
    if net.output_dim != 1:
        raise SpecificationError("gradient bounds need a scalar-output network")
    if len(pre.lower) != net.n_layers - 1:
        raise SpecificationError(
            f"pre-activation bounds cover {len(pre.lower)} layers, network has {net.n_layers - 1} hidden")
    for i, (lo, W) in enumerate(zip(pre.lower, net.weights)):
        if np.shape(lo)[-1] != W.shape[0]:
            raise SpecificationError(f"pre-activation bounds of layer {i} have the wrong width")
    if net.n_layers == 1:
        w = net.weights[0][0]
        return GradientBounds(w.copy(), w.copy(), box)
    g_lo, g_hi = _backward_gradient_intervals(net, list(pre.lower), list(pre.upper))
    return GradientBounds(g_lo, g_hi, box)


def gradient_bounds(net: ReluMlp, box: HyperBox, refine: int = DEFAULT_REFINE,
                    intermediate: str = "ibp") -> GradientBounds:
    """Gradient bounds over ``box`` as the hull of bounds on a uniform partition.

    ``refine`` bisects every dimension that many times before bounding each
    cell; ``refine=0`` is the plain interval form. Because cell bounds are
    contained in the whole-box bounds, refinement only tightens.
    ``intermediate`` picks the pre-activation bounds (``ibp`` or ``crown``).
    """
    if box.dims != net.input_dim:
        raise SpecificationError(f"box has {box.dims} dimensions, network expects {net.input_dim}")
    if net.output_dim != 1:
        raise SpecificationError("gradient bounds need a scalar-output network")
    if net.n_layers == 1:
        w = net.weights[0][0]
        return GradientBounds(w.copy(), w.copy(), box)
    cells = uniform_split(box, refine)
    lower = np.array([c.lower for c in cells])
    upper = np.array([c.upper for c in cells])
    pre_lo, pre_hi = preactivation_arrays(net, lower, upper, intermediate)
    g_lo, g_hi = _backward_gradient_intervals(net, pre_lo, pre_hi)
    return GradientBounds(g_lo.min(axis=0), g_hi.max(axis=0), box)


def gradient_cases(net: ReluMlp, box: HyperBox, max_unstable: int,
                   hull: Optional[GradientBounds] = None,
                   intermediate: str = "ibp") -> Optional[list]:
    """Gradient bounds for each derivative assignment of the unstable neurons.

    Every differentiable point of ``box`` has some 0/1 derivative on each
    unstable neuron, so its gradient lies in one of the returned bounds.
    Returns None when more than ``max_unstable`` neurons are unstable. Cases
    are intersected with ``hull`` when given; empty intersections are dropped.
    """
    if net.n_layers == 1:
        return None
    pre_lo, pre_hi = preactivation_arrays(net, box.lower[None, :], box.upper[None, :],
                                          intermediate)
    pre_lo = [l[0] for l in pre_lo]
    pre_hi = [h[0] for h in pre_hi]
    statuses = [neuron_status(lo, hi) for lo, hi in zip(pre_lo, pre_hi)]
    unstable = [(i, j) for i, st in enumerate(statuses)
                for j in np.flatnonzero(st == NeuronStatus.UNSTABLE)]
    if not unstable or len(unstable) > max_unstable:
        return None
    cases = []
    for assignment in itertools.product((NeuronStatus.INACTIVE, NeuronStatus.ACTIVE),
                                        repeat=len(unstable)):
        fixed = [st.copy() for st in statuses]
        for (i, j), value in zip(unstable, assignment):
            fixed[i][j] = value
        g_lo, g_hi = _backward_gradient_intervals(net, pre_lo, pre_hi, fixed)
        if hull is not None:
            g_lo = np.maximum(g_lo, hull.d_lo)
            g_hi = np.minimum(g_hi, hull.d_hi)
            if np.any(g_lo > g_hi + 1e-9 * (1.0 + np.abs(g_hi))):
                continue
            g_hi = np.maximum(g_hi, g_lo)
        cases.append(GradientBounds(g_lo, g_hi, box))
    return cases


def split_pos_neg(gb: GradientBounds):
    """``([d_hi]+, [d_lo]+, [d_hi]-, [d_lo]-)``."""
    return (np.maximum(gb.d_hi, 0.0), np.maximum(gb.d_lo, 0.0),
            np.minimum(gb.d_hi, 0.0), np.minimum(gb.d_lo, 0.0))
