"""Value bounds for ReLU networks and sums of ReLU expressions over a box.

Two bounding schemes are provided: interval bound propagation (IBP) and a
backward linear relaxation in the style of CROWN. Both act on
``CompositeExpression`` values, which are sums of single-layer ReLU terms
``c . relu(A x + b)`` plus a scaled network plus a constant.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import NumericError, SchemaError, SpecificationError
from .geometry import HyperBox, Interval, interval_matvec, interval_matvec_arrays
from .network import ReluMlp


class NeuronStatus(enum.IntEnum):
    INACTIVE = 0
    ACTIVE = 1
    UNSTABLE = 2


def neuron_status(lo, hi) -> np.ndarray:
    lo = np.asarray(lo)
    hi = np.asarray(hi)
    status = np.full(lo.shape, NeuronStatus.UNSTABLE, dtype=int)
    status[lo >= 0] = NeuronStatus.ACTIVE
    # Heaviside(0) is 0, so a neuron pinned at zero counts as inactive
    status[hi <= 0] = NeuronStatus.INACTIVE
    return status


@dataclass(frozen=True)
class PreactivationBounds:
    """Interval bounds on the hidden pre-activations of a network over a box."""

    lower: tuple
    upper: tuple

    def status(self, layer: int) -> np.ndarray:
        return neuron_status(self.lower[layer], self.upper[layer])

    @property
    def n_unstable(self) -> int:
        return int(sum(np.sum(self.status(i) == NeuronStatus.UNSTABLE)
                       for i in range(len(self.lower))))

    def intervals(self, layer: int) -> list[Interval]:
        return [Interval(float(l), float(u)) for l, u in zip(self.lower[layer], self.upper[layer])]


@dataclass(frozen=True)
class LinearBounds:
    """Affine envelope ``W_lo x + b_lo <= v(x) <= W_hi x + b_hi`` over ``box``."""

    W_lo: np.ndarray
    b_lo: np.ndarray
    W_hi: np.ndarray
    b_hi: np.ndarray
    box: Optional[HyperBox] = None


def concretize(lb: LinearBounds, box: Optional[HyperBox] = None) -> list[Interval]:
    box = box if box is not None else lb.box
    if box is None:
        raise SpecificationError("concretize needs a box")
    W_lo = np.atleast_2d(np.asarray(lb.W_lo, dtype=float))
    W_hi = np.atleast_2d(np.asarray(lb.W_hi, dtype=float))
    b_lo = np.asarray(lb.b_lo, dtype=float).reshape(-1)
    b_hi = np.asarray(lb.b_hi, dtype=float).reshape(-1)
    if W_lo.shape != W_hi.shape or b_lo.size != W_lo.shape[0] or b_hi.size != W_hi.shape[0]:
        raise SpecificationError("inconsistent LinearBounds shapes")
    lows = interval_matvec(W_lo, box)
    highs = interval_matvec(W_hi, box)
    return [Interval(lo.lo + bl, hi.hi + bh) for lo, hi, bl, bh in zip(lows, highs, b_lo, b_hi)]


def _ibp_arrays(net: ReluMlp, lower, upper):
    """Batched IBP; returns per-hidden-layer bounds and output bounds."""
    pre_lo, pre_hi = [], []
    lo, hi = lower, upper
    last = net.n_layers - 1
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        zl, zu = interval_matvec_arrays(W, lo, hi)
        zl = zl + b
        zu = zu + b
        if i < last:
            pre_lo.append(zl)
            pre_hi.append(zu)
            lo = np.maximum(zl, 0.0)
            hi = np.maximum(zu, 0.0)
        else:
            lo, hi = zl, zu
    return pre_lo, pre_hi, lo, hi


def _check_box(net: ReluMlp, box: HyperBox):
    if box.dims != net.input_dim:
        raise SpecificationError(
            f"box has {box.dims} dimensions, network expects {net.input_dim}")


def ibp_bounds(net: ReluMlp, box: HyperBox) -> tuple[PreactivationBounds, Interval]:
    _check_box(net, box)
    pre_lo, pre_hi, lo, hi = _ibp_arrays(net, box.lower, box.upper)
    pre = PreactivationBounds(tuple(pre_lo), tuple(pre_hi))
    return pre, Interval(float(lo[0]), float(hi[0]))


def _relu_relaxation(lo, hi):
    """Upper slope/intercept and lower slope of the ReLU on ``[lo, hi]``."""
    status = neuron_status(lo, hi)
    up_slope = np.zeros_like(lo)
    up_icpt = np.zeros_like(lo)
    low_slope = np.zeros_like(lo)
    act = status == NeuronStatus.ACTIVE
    up_slope[act] = 1.0
    low_slope[act] = 1.0
    uns = status == NeuronStatus.UNSTABLE
    if np.any(uns):
        l, u = lo[uns], hi[uns]
        s = u / (u - l)
        up_slope[uns] = s
        up_icpt[uns] = -l * s
        low_slope[uns] = np.where(u >= -l, 1.0, 0.0)
    return up_slope, up_icpt, low_slope


def _backward_upper(net: ReluMlp, C, pre_lo, pre_hi, layer: int):
    """Linear upper bound of ``C @ zhat_layer`` as ``A x + bias``.

    ``layer`` indexes the affine layer whose output is bounded; ``pre_lo`` and
    ``pre_hi`` hold bounds of the hidden pre-activations below it.
    """
    A = np.asarray(C, dtype=float)
    bias = np.zeros(A.shape[0])
    for i in range(layer, -1, -1):
        bias = bias + A @ net.biases[i]
        A = A @ net.weights[i]
        if i > 0:
            su, tu, sl = _relu_relaxation(pre_lo[i - 1], pre_hi[i - 1])
            pos = np.maximum(A, 0.0)
            neg = np.minimum(A, 0.0)
            bias = bias + pos @ tu
            A = pos * su + neg * sl
    return A, bias


def _max_affine(A, bias, box: HyperBox):
    _, hi = interval_matvec_arrays(A, box.lower, box.upper)
    return hi + bias


def crown_preactivation_arrays(net: ReluMlp, lower, upper):
    """Batched hidden-layer bounds: backward relaxation intersected with IBP.

    ``lower`` and ``upper`` have shape ``(B, n)``; returns lists of ``(B, width)``
    arrays. Each layer is bounded from the refined bounds of the layers below.
    """
    lower = np.atleast_2d(np.asarray(lower, dtype=float))
    upper = np.atleast_2d(np.asarray(upper, dtype=float))
    ibp_lo, ibp_hi, _, _ = _ibp_arrays(net, lower, upper)
    if not ibp_lo:
        return [], []
    lo_out, hi_out = [ibp_lo[0]], [ibp_hi[0]]
    B = lower.shape[0]
    for j in range(1, len(ibp_lo)):
        k = net.weights[j].shape[0]
        eye = np.eye(k)
        A = np.broadcast_to(np.concatenate([eye, -eye]), (B, 2 * k, k))
        bias = np.zeros((B, 2 * k))
        for i in range(j, -1, -1):
            bias = bias + A @ net.biases[i]
            A = A @ net.weights[i]
            if i > 0:
                su, tu, sl = _relu_relaxation(lo_out[i - 1], hi_out[i - 1])
                pos = np.maximum(A, 0.0)
                neg = np.minimum(A, 0.0)
                bias = bias + np.einsum("brm,bm->br", pos, tu)
                A = pos * su[:, None, :] + neg * sl[:, None, :]
        top = (np.einsum("brn,bn->br", np.maximum(A, 0.0), upper)
               + np.einsum("brn,bn->br", np.minimum(A, 0.0), lower) + bias)
        lo_out.append(np.maximum(-top[:, k:], ibp_lo[j]))
        hi_out.append(np.minimum(top[:, :k], ibp_hi[j]))
    return lo_out, hi_out


def preactivation_arrays(net: ReluMlp, lower, upper, intermediate: str = "ibp"):
    """Batched hidden-layer bounds by the named scheme (``ibp`` or ``crown``)."""
    if intermediate == "ibp":
        pre_lo, pre_hi, _, _ = _ibp_arrays(net, lower, upper)
        return pre_lo, pre_hi
    if intermediate == "crown":
        return crown_preactivation_arrays(net, lower, upper)
    raise SpecificationError(f"unknown intermediate bound scheme {intermediate!r}")


def preactivation_bounds(net: ReluMlp, box: HyperBox, intermediate: str = "ibp") -> PreactivationBounds:
    """Hidden-layer bounds by IBP, or by backward relaxation intersected with IBP."""
    _check_box(net, box)
    pre_lo, pre_hi = preactivation_arrays(net, box.lower[None, :], box.upper[None, :], intermediate)
    return PreactivationBounds(tuple(l[0] for l in pre_lo), tuple(h[0] for h in pre_hi))


def network_linear_upper(net: ReluMlp, box: HyperBox, pre: Optional[PreactivationBounds] = None):
    """Affine ``(w, c)`` with ``net(x) <= w @ x + c`` on ``box``."""
    if net.output_dim != 1:
        raise SpecificationError("linear upper bounds need a scalar-output network")
    if pre is None:
        pre = preactivation_bounds(net, box)
    A, c = _backward_upper(net, np.ones((1, 1)), pre.lower, pre.upper, net.n_layers - 1)
    return A[0], float(c[0])


# ---------------------------------------------------------------------------
# composite expressions


@dataclass(frozen=True)
class ReluTerm:
    """``coef . relu(weight @ x + bias)``."""

    coef: np.ndarray
    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        coef = np.asarray(self.coef, dtype=float).reshape(-1)
        weight = np.atleast_2d(np.asarray(self.weight, dtype=float))
        bias = np.asarray(self.bias, dtype=float).reshape(-1)
        if weight.shape[0] != coef.size or bias.size != coef.size:
            raise SpecificationError(
                f"malformed ReLU term: coef {coef.shape}, weight {weight.shape}, bias {bias.shape}")
        object.__setattr__(self, "coef", coef)
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "bias", bias)

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.maximum(X @ self.weight.T + self.bias, 0.0) @ self.coef

    def input_bounds(self, box: HyperBox):
        lo, hi = interval_matvec_arrays(self.weight, box.lower, box.upper)
        return lo + self.bias, hi + self.bias

    def is_zero(self) -> bool:
        return not np.any(self.coef)

    def to_dict(self) -> dict:
        return {"coef": self.coef.tolist(), "weight": self.weight.tolist(),
                "bias": self.bias.tolist()}


@dataclass(frozen=True)
class CompositeExpression:
    """``sum(terms) + scale * network(x) + constant``."""

    terms: tuple = ()
    network: Optional[ReluMlp] = None
    scale: float = 0.0
    constant: float = 0.0
    labels: tuple = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        dims = {t.weight.shape[1] for t in self.terms}
        if self.network is not None:
            if self.network.output_dim != 1:
                raise SpecificationError("expression network must be scalar-valued")
            dims.add(self.network.input_dim)
        if len(dims) > 1:
            raise SpecificationError(f"expression parts disagree on input dimension: {sorted(dims)}")
        if not np.isfinite(self.scale) or not np.isfinite(self.constant):
            raise SpecificationError("scale and constant must be finite")

    @property
    def input_dim(self) -> Optional[int]:
        if self.terms:
            return self.terms[0].weight.shape[1]
        return self.network.input_dim if self.network is not None else None

    @property
    def has_network(self) -> bool:
        return self.network is not None and self.scale != 0

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        total = np.full(X.shape[:-1], float(self.constant))
        for t in self.terms:
            total = total + t(X)
        if self.has_network:
            total = total + self.scale * self.network(X)
        return total

    def pruned(self) -> "CompositeExpression":
        keep = [(t, lab) for t, lab in zip(self.terms, self.labels or [None] * len(self.terms))
                if not t.is_zero()]
        return CompositeExpression(tuple(t for t, _ in keep), self.network, self.scale,
                                   self.constant, tuple(l for _, l in keep) if self.labels else ())

    def to_dict(self) -> dict:
        doc = self.network.to_dict() if self.network is not None else {"layers": []}
        doc["scale"] = self.scale
        doc["constant"] = self.constant
        doc["terms"] = [t.to_dict() for t in self.terms]
        if self.labels:
            for entry, lab in zip(doc["terms"], self.labels):
                entry["label"] = lab
        return doc

    @classmethod
    def from_dict(cls, data) -> "CompositeExpression":
        try:
            terms = tuple(ReluTerm(t["coef"], t["weight"], t["bias"]) for t in data["terms"])
            labels = tuple(t.get("label", "") for t in data["terms"])
            network = ReluMlp.from_dict(data) if data.get("layers") else None
            return cls(terms, network, float(data.get("scale", 0.0)),
                       float(data.get("constant", 0.0)),
                       labels if any(labels) else ())
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed expression document: {exc}") from exc


def _check_expr(expr: CompositeExpression, box: HyperBox):
    dim = expr.input_dim
    if dim is not None and dim != box.dims:
        raise SpecificationError(f"expression expects {dim}-D input, box is {box.dims}-D")


def _term_linear_upper(term: ReluTerm, box: HyperBox):
    lo, hi = term.input_bounds(box)
    su, tu, sl = _relu_relaxation(lo, hi)
    pos = np.maximum(term.coef, 0.0)
    neg = np.minimum(term.coef, 0.0)
    slope = pos * su + neg * sl
    w = slope @ term.weight
    c = slope @ term.bias + pos @ tu
    return w, float(c)


def _mirrored(a: ReluTerm, b: ReluTerm) -> bool:
    return (a.weight.shape == b.weight.shape and np.array_equal(a.weight, -b.weight)
            and np.array_equal(a.bias, -b.bias))


def _pair_terms(terms):
    """Group terms whose ReLU inputs are exact negatives of each other."""
    used = set()
    pairs, singles = [], []
    for i, t in enumerate(terms):
        if i in used:
            continue
        for j in range(i + 1, len(terms)):
            if j not in used and _mirrored(t, terms[j]):
                pairs.append((t, terms[j]))
                used.update((i, j))
                break
        else:
            singles.append(t)
            used.add(i)
    return pairs, singles


def _pair_linear_upper(t: ReluTerm, m: ReluTerm, box: HyperBox):
    """Upper line of ``a relu(z) + b relu(-z)`` per entry, ``z = t.weight x + t.bias``.

    The two-piece function is convex when ``a + b >= 0``; its chord over the
    input interval is then the tightest linear upper bound. Otherwise one of
    the two pieces through the origin is used.
    """
    lo, hi = t.input_bounds(box)
    a, b = t.coef, m.coef
    slope = np.where(lo >= 0, a, -b)
    icpt = np.zeros_like(lo)
    uns = (lo < 0) & (hi > 0)
    if np.any(uns):
        l, u, au, bu = lo[uns], hi[uns], a[uns], b[uns]
        chord = (au * u + bu * l) / (u - l)
        piece = np.where(np.maximum(au * l, au * u) <= np.maximum(-bu * l, -bu * u), au, -bu)
        convex = au + bu >= 0
        slope[uns] = np.where(convex, chord, piece)
        icpt[uns] = np.where(convex, -bu * l - chord * l, 0.0)
    w = slope @ t.weight
    c = slope @ t.bias + float(np.sum(icpt))
    return w, float(c)


def linear_upper(expr: CompositeExpression, box: HyperBox, *,
                 intermediate: str = "ibp", network_form=None):
    """Affine ``(w, c)`` upper-bounding ``expr`` on ``box``.

    ``network_form`` may pass a precomputed ``network_linear_upper`` result for
    the expression's network (it does not depend on the ReLU terms).
    """
    _check_expr(expr, box)
    w = np.zeros(box.dims)
    c = float(expr.constant)
    pairs, singles = _pair_terms(expr.terms)
    for t, m in pairs:
        tw, tc = _pair_linear_upper(t, m, box)
        w = w + tw
        c = c + tc
    for term in singles:
        tw, tc = _term_linear_upper(term, box)
        w = w + tw
        c = c + tc
    if expr.has_network:
        if network_form is None:
            pre = preactivation_bounds(expr.network, box, intermediate)
            network_form = network_linear_upper(expr.network, box, pre)
        nw, nc = network_form
        if expr.scale < 0:
            raise SpecificationError("linear_upper needs a nonnegative network scale")
        w = w + expr.scale * nw
        c = c + expr.scale * nc
    return w, c


def ibp_upper_bound(expr: CompositeExpression, box: HyperBox, network_interval=None) -> float:
    """Upper bound of ``expr`` on ``box`` by plain interval arithmetic."""
    _check_expr(expr, box)
    total = float(expr.constant)
    for term in expr.terms:
        lo, hi = term.input_bounds(box)
        pos = np.maximum(term.coef, 0.0)
        neg = np.minimum(term.coef, 0.0)
        total += float(pos @ np.maximum(hi, 0.0) + neg @ np.maximum(lo, 0.0))
    if expr.has_network:
        if network_interval is None:
            _, network_interval = ibp_bounds(expr.network, box)
        total += expr.scale * (network_interval.hi if expr.scale >= 0 else network_interval.lo)
    if not np.isfinite(total):
        raise NumericError("non-finite IBP bound")
    return total


def crown_upper_bound(expr: CompositeExpression, box: HyperBox, *, intermediate: str = "ibp",
                      ibp_fallback: bool = True, network_form=None, network_interval=None) -> float:
    """Sound upper bound of ``expr`` over ``box`` by backward linear relaxation.

    Unstable ReLUs use the chord as upper line and an adaptive lower line
    (slope 1 when ``hi >= -lo``, else 0). The resulting affine form is
    maximised over the box. With ``ibp_fallback`` the result is capped by the
    interval-arithmetic bound, which is equally sound.
    """
    w, c = linear_upper(expr, box, intermediate=intermediate, network_form=network_form)
    bound = float(_max_affine(w[None, :], np.array([c]), box)[0])
    if not np.isfinite(bound):
        raise NumericError("non-finite linear relaxation bound")
    if ibp_fallback:
        bound = min(bound, ibp_upper_bound(expr, box, network_interval))
    return bound


def concretize_terms(expr: CompositeExpression, box: HyperBox) -> CompositeExpression:
    """Replace each ReLU input by the constant end of its interval that bounds the term from above.

    Entries with nonnegative coefficient take the upper end of ``A x + b``,
    negative ones the lower end; the weight becomes zero.
    """
    _check_expr(expr, box)
    terms = []
    for term in expr.terms:
        lo, hi = term.input_bounds(box)
        const = np.where(term.coef >= 0, hi, lo)
        terms.append(ReluTerm(term.coef, np.zeros_like(term.weight), const))
    return CompositeExpression(tuple(terms), expr.network, expr.scale, expr.constant, expr.labels)


def exact_affine_bounds(weight, bias, box: HyperBox) -> LinearBounds:
    """LinearBounds of an affine map, exact on every box."""
    W = np.atleast_2d(np.asarray(weight, dtype=float))
    b = np.asarray(bias, dtype=float).reshape(-1)
    return LinearBounds(W, b, W, b, box)

