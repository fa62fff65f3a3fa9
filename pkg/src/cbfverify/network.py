"""ReLU multilayer perceptrons parameterizing a neural CBF."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import NonDifferentiableError, SchemaError, SpecificationError

KINK_TOL = 1e-9

# hidden and output widths of the model sizes used in the experiments
MODEL_SIZES = {
    "small": (8, 8, 8, 1),
    "default": (16, 64, 16, 1),
    "large": (64, 128, 64, 1),
}


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


class ReluMlp:
    """Feedforward network ``W_L relu(... relu(W_1 x + b_1) ...) + b_L``.

    ReLU follows every layer except the last.
    """

    def __init__(self, weights: Sequence, biases: Sequence):
        if len(weights) == 0 or len(weights) != len(biases):
            raise SpecificationError(
                f"need one bias per weight matrix, got {len(weights)} weights and {len(biases)} biases")
        ws, bs = [], []
        for i, (W, b) in enumerate(zip(weights, biases)):
            W = np.atleast_2d(np.array(W, dtype=float))
            b = np.array(b, dtype=float).reshape(-1)
            if W.ndim != 2:
                raise SpecificationError(f"layer {i}: weight must be a matrix")
            if b.size != W.shape[0]:
                raise SpecificationError(
                    f"layer {i}: bias length {b.size} does not match {W.shape[0]} weight rows")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise SpecificationError(f"layer {i}: non-finite weight or bias")
            if i > 0 and W.shape[1] != ws[-1].shape[0]:
                raise SpecificationError(
                    f"layer {i}: expects {W.shape[1]} inputs but layer {i - 1} "
                    f"produces {ws[-1].shape[0]} outputs")
            ws.append(_frozen(W))
            bs.append(_frozen(b))
        self.weights = tuple(ws)
        self.biases = tuple(bs)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def layer_sizes(self) -> tuple:
        return tuple(W.shape[0] for W in self.weights)

    def __call__(self, X) -> np.ndarray:
        """Batch evaluation; ``X`` has shape ``(..., input_dim)``."""
        z = np.asarray(X, dtype=float)
        last = self.n_layers - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = z @ W.T + b
            if i < last:
                z = np.maximum(z, 0.0)
        if self.output_dim == 1:
            return z[..., 0]
        return z

    def gradients(self, X) -> np.ndarray:
        """Batch input gradients of a scalar network (Heaviside(0) taken as 0)."""
        if self.output_dim != 1:
            raise SpecificationError("gradients need a scalar-output network")
        z = np.atleast_2d(np.asarray(X, dtype=float))
        masks = []
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            pre = z @ W.T + b
            masks.append(pre > 0)
            z = np.maximum(pre, 0.0)
        g = np.broadcast_to(self.weights[-1][0], (z.shape[0], z.shape[1])).copy()
        for W, m in zip(reversed(self.weights[:-1]), reversed(masks)):
            g = (g * m) @ W
        return g

    def to_dict(self) -> dict:
        return {"layers": [{"weight": W.tolist(), "bias": b.tolist()}
                           for W, b in zip(self.weights, self.biases)]}

    @classmethod
    def from_dict(cls, data) -> "ReluMlp":
        if not isinstance(data, dict) or "layers" not in data:
            raise SchemaError("model document needs a top-level 'layers' array")
        layers = data["layers"]
        if not isinstance(layers, list) or not layers:
            raise SchemaError("'layers' must be a non-empty array")
        weights, biases = [], []
        for i, layer in enumerate(layers):
            if not isinstance(layer, dict):
                raise SchemaError(f"layers[{i}] must be an object")
            for key in ("weight", "bias"):
                if key not in layer:
                    raise SchemaError(f"layers[{i}] is missing '{key}'")
            try:
                W = np.array(layer["weight"], dtype=float)
                b = np.array(layer["bias"], dtype=float)
            except (TypeError, ValueError) as exc:
                raise SchemaError(f"layers[{i}]: weights must be numeric ({exc})") from exc
            if W.ndim != 2:
                raise SchemaError(f"layers[{i}].weight must be a 2-D array, got {W.ndim}-D")
            if b.ndim != 1:
                raise SchemaError(f"layers[{i}].bias must be a 1-D array")
            if not np.all(np.isfinite(W)):
                raise SchemaError(f"layers[{i}].weight contains a non-finite value")
            if not np.all(np.isfinite(b)):
                raise SchemaError(f"layers[{i}].bias contains a non-finite value")
            if b.size != W.shape[0]:
                raise SchemaError(
                    f"layers[{i}]: bias length {b.size} != weight rows {W.shape[0]}")
            if i > 0 and W.shape[1] != weights[-1].shape[0]:
                raise SchemaError(
                    f"layer chain broken between layers[{i - 1}] ({weights[-1].shape[0]} outputs) "
                    f"and layers[{i}] ({W.shape[1]} inputs)")
            weights.append(W)
            biases.append(b)
        return cls(weights, biases)

    def fingerprint(self) -> str:
        import hashlib
        h = hashlib.sha256()
        for W, b in zip(self.weights, self.biases):
            h.update(np.ascontiguousarray(W).tobytes())
            h.update(np.ascontiguousarray(b).tobytes())
        return h.hexdigest()

    def __eq__(self, other):
        if not isinstance(other, ReluMlp) or self.n_layers != other.n_layers:
            return NotImplemented if not isinstance(other, ReluMlp) else False
        return all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights)) and \
            all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases))

    def __repr__(self):
        return f"ReluMlp(input_dim={self.input_dim}, layer_sizes={self.layer_sizes})"


@dataclass(frozen=True)
class ActivationTrace:
    preactivations: tuple
    output: float


def _check_input(net: ReluMlp, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != net.input_dim:
        raise SpecificationError(f"input has length {x.size}, network expects {net.input_dim}")
    if not np.all(np.isfinite(x)):
        raise SpecificationError("input must be finite")
    return x


def forward(net: ReluMlp, x) -> ActivationTrace:
    z = _check_input(net, x)
    pre = []
    for W, b in zip(net.weights[:-1], net.biases[:-1]):
        zh = W @ z + b
        pre.append(zh)
        z = np.maximum(zh, 0.0)
    out = net.weights[-1] @ z + net.biases[-1]
    return ActivationTrace(tuple(pre), float(out[0]) if out.size == 1 else out)


def exact_gradient(net: ReluMlp, x, kink_tol: float = KINK_TOL) -> np.ndarray:
    """Input gradient by back-substitution of the chain rule.

    Raises NonDifferentiableError if any pre-activation is within
    ``kink_tol`` of zero.
    """
    if net.output_dim != 1:
        raise SpecificationError("exact_gradient needs a scalar-output network")
    trace = forward(net, x)
    for i, zh in enumerate(trace.preactivations):
        if np.any(np.abs(zh) <= kink_tol):
            raise NonDifferentiableError(f"non-differentiable point: layer {i} pre-activation at a kink")
    g = net.weights[-1][0].copy()
    for W, zh in zip(reversed(net.weights[:-1]), reversed(trace.preactivations)):
        g = W.T @ (g * (zh > 0))
    return g


def save_model(net: ReluMlp, path) -> None:
    Path(path).write_text(json.dumps(net.to_dict(), indent=1))


def load_model(path) -> ReluMlp:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON ({exc.msg})") from exc
    try:
        return ReluMlp.from_dict(data)
    except SchemaError as exc:
        raise SchemaError(f"{path}: {exc}") from exc


def example_1_network() -> ReluMlp:
    """Two-unit CBF ``[1 1] relu([[√2, 1], [√2, -1]] x) - 0.05``."""
    r2 = math.sqrt(2.0)
    return ReluMlp([[[r2, 1.0], [r2, -1.0]], [[1.0, 1.0]]], [[0.0, 0.0], [-0.05]])


def random_cbf_network(input_dim: int, size="default", *, domain=None, rng=None,
                       n_calibration: int = 2048) -> ReluMlp:
    """Random ReLU network whose zero level set crosses ``domain``.

    Inputs are rescaled so the domain maps to ``[-1, 1]^n``, weights follow
    He initialisation, and the output is shifted by the median and scaled to
    unit spread over uniform samples of the domain.
    """
    rng = np.random.default_rng(rng)
    sizes = MODEL_SIZES[size] if isinstance(size, str) else tuple(size)
    dims = (input_dim,) + sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_out, fan_in)))
        biases.append(rng.normal(0.0, 0.1, size=fan_out))
    if domain is not None:
        lower = np.asarray(domain.lower, dtype=float)
        upper = np.asarray(domain.upper, dtype=float)
    else:
        lower = -np.ones(input_dim)
        upper = np.ones(input_dim)
    center = (lower + upper) / 2
    half = np.where(upper > lower, (upper - lower) / 2, 1.0)
    W1 = weights[0] / half
    biases[0] = biases[0] - W1 @ center
    weights[0] = W1
    net = ReluMlp(weights, biases)
    samples = rng.uniform(lower, upper, size=(n_calibration, input_dim))
    vals = net(samples)
    spread = float(np.std(vals)) or 1.0
    weights[-1] = weights[-1] / spread
    biases[-1] = (biases[-1] - np.median(vals)) / spread
    return ReluMlp(weights, biases)
