"""Sampling search for states that violate the CBF boundary condition.

Counterexamples give an unsound upper bound on the verified rate: a box with
a violating sample can never be verified.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import qmc

from .dynamics import DynamicsModel
from .exceptions import SpecificationError
from .geometry import HyperBox
from .network import ReluMlp
from .verifier import BoundarySet, exact_condition

SEED_ENV = "CBF_VERIFY_SEED"
DEFAULT_BUDGET = 10_000
REFINE_STEPS = 20


@dataclass(frozen=True)
class Counterexample:
    x: np.ndarray
    value: float
    box_index: int
    refined: bool = False

    def to_dict(self) -> dict:
        return {"box_index": self.box_index, "x": np.asarray(self.x).tolist(),
                "value": self.value, "refined": self.refined}

    @classmethod
    def from_dict(cls, data: dict) -> "Counterexample":
        return cls(np.asarray(data["x"], dtype=float), float(data["value"]),
                   int(data["box_index"]), bool(data.get("refined", False)))


def base_seed() -> int:
    raw = os.environ.get(SEED_ENV, "0")
    try:
        return int(raw)
    except ValueError as exc:
        raise SpecificationError(f"{SEED_ENV} must be an integer, got {raw!r}") from exc


def sample_box(box: HyperBox, budget: int, seed: int) -> np.ndarray:
    """Box center followed by ``budget - 1`` scrambled Sobol points."""
    pts = [box.center[None, :]]
    if budget > 1:
        sobol = qmc.Sobol(box.dims, scramble=True, seed=seed)
        with warnings.catch_warnings():
            # budgets need not be powers of two
            warnings.simplefilter("ignore", UserWarning)
            unit = sobol.random(budget - 1)
        pts.append(box.lower + unit * box.widths)
    return np.concatenate(pts)


def _coordinate_ascent(value_fn, x, value, box: HyperBox, steps: int):
    step = box.widths / 8
    for _ in range(steps):
        improved = False
        for i in np.flatnonzero(step > 0):
            for sign in (1.0, -1.0):
                y = x.copy()
                y[i] = np.clip(y[i] + sign * step[i], box.lower[i], box.upper[i])
                v = float(value_fn(y[None, :])[0])
                if v > value:
                    x, value, improved = y, v, True
                    break
        if not improved:
            step = step / 2
    return x, value


def falsify_box(net: ReluMlp, model: DynamicsModel, box: HyperBox, control_box: HyperBox,
                alpha: float, budget: int = DEFAULT_BUDGET, *, box_index: int = 0,
                seed: Optional[int] = None, refine: bool = True) -> Optional[Counterexample]:
    """Worst strictly violating sample of ``box``, or None.

    The condition ``min_u phi_dot + alpha phi`` is evaluated in closed form.
    The sequence is seeded by ``seed + box_index`` (``seed`` defaults to the
    CBF_VERIFY_SEED environment variable, else 0). With ``refine``, the worst
    sample is improved by a short coordinate ascent inside the box.
    """
    if budget < 1:
        raise SpecificationError(f"budget must be at least 1, got {budget}")
    if alpha < 0:
        raise SpecificationError("alpha must be nonnegative")
    seed = base_seed() if seed is None else int(seed)

    def value_fn(X):
        return exact_condition(net, model, X, control_box, alpha)

    X = sample_box(box, int(budget), seed + int(box_index))
    values = value_fn(X)
    k = int(np.argmax(values))
    x, value = X[k].copy(), float(values[k])
    refined = False
    if refine:
        x2, v2 = _coordinate_ascent(value_fn, x, value, box, REFINE_STEPS)
        refined = v2 > value
        x, value = x2, v2
    if value > 0:
        return Counterexample(x, value, int(box_index), refined)
    return None


def falsify_all(net: ReluMlp, model: DynamicsModel, boundary, alpha: float,
                budget: int = DEFAULT_BUDGET, *, control_box: Optional[HyperBox] = None,
                seed: Optional[int] = None, refine: bool = True) -> list:
    control_box = control_box if control_box is not None else model.control_domain
    boxes = boundary.boxes if isinstance(boundary, BoundarySet) else list(boundary)
    return [falsify_box(net, model, b, control_box, alpha, budget, box_index=i, seed=seed,
                        refine=refine) for i, b in enumerate(boxes)]


def falsification_rate(net: ReluMlp, model: DynamicsModel, boundary, alpha: float,
                       budget: int = DEFAULT_BUDGET, **kwargs) -> float:
    """Fraction of boundary boxes without a counterexample (1.0 when empty)."""
    found = falsify_all(net, model, boundary, alpha, budget, **kwargs)
    if not found:
        return 1.0
    return sum(c is None for c in found) / len(found)
