"""Boundary extraction and branch-and-bound verification of the CBF boundary condition.

For every boundary box the verifier proves

    max_x min_u  grad phi(x) . (f(x) + g(x) u) + alpha * phi(x)  <=  tolerance

by fixing a vertex control, bounding the gradient with constants and the
dynamics with first-order Taylor models, and bounding the resulting sum of
ReLU expressions. Boxes that fail are bisected breadth first.
"""

from __future__ import annotations

import enum
import itertools
import math
import time
import warnings
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .dynamics import DynamicsBounds, DynamicsModel, taylor_bounds
from .exceptions import NonDifferentiableError, NumericError, SchemaError, SpecificationError
from .geometry import HyperBox, split_box, vertices
from .gradient import (DEFAULT_REFINE, GradientBounds, gradient_bounds, gradient_cases,
                       split_pos_neg)
from .network import ReluMlp, exact_gradient
from .relaxation import (CompositeExpression, ReluTerm, concretize_terms, crown_upper_bound,
                         ibp_bounds, ibp_upper_bound, network_linear_upper, preactivation_bounds)

TERM_LABELS = ("[d_hi]+ relu(h_hi)", "-[d_lo]+ relu(-h_hi)",
               "[d_hi]- relu(h_lo)", "-[d_lo]- relu(-h_lo)")


class Mode(str, enum.Enum):
    SYMBOLIC = "symbolic"
    CONCRETE = "concrete"
    IBP = "ibp"


class Status(str, enum.Enum):
    VERIFIED = "verified"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class VerificationConfig:
    alpha: float = 0.5
    mode: Mode = Mode.SYMBOLIC
    max_splits: int = 1000
    grids_per_dim: int = 20
    vertex_traversal_cap: int = 4
    tolerance: float = 0.0
    gradient_refine: int = DEFAULT_REFINE
    intermediate: str = "auto"
    gradient_cases: int = 4
    record: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if not (self.alpha >= 0 and math.isfinite(self.alpha)):
            raise SpecificationError(f"alpha must be a finite nonnegative number, got {self.alpha}")
        if int(self.max_splits) != self.max_splits or self.max_splits < 1:
            raise SpecificationError(f"max_splits must be a positive integer, got {self.max_splits}")
        if self.vertex_traversal_cap < 0:
            raise SpecificationError("vertex_traversal_cap must be nonnegative")
        if self.gradient_cases < 0:
            raise SpecificationError("gradient_cases must be nonnegative")
        if self.gradient_refine < 0:
            raise SpecificationError("gradient_refine must be nonnegative")
        if self.intermediate not in ("auto", "ibp", "crown"):
            raise SpecificationError(f"unknown intermediate scheme {self.intermediate!r}")

    @property
    def scheme(self) -> str:
        """Pre-activation bound scheme; ``auto`` is IBP for the ibp mode, else CROWN."""
        if self.intermediate != "auto":
            return self.intermediate
        return "ibp" if self.mode is Mode.IBP else "crown"

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "mode": self.mode.value, "max_splits": self.max_splits,
                "grids_per_dim": self.grids_per_dim,
                "vertex_traversal_cap": self.vertex_traversal_cap, "tolerance": self.tolerance,
                "gradient_refine": self.gradient_refine, "intermediate": self.intermediate,
                "gradient_cases": self.gradient_cases}

    @classmethod
    def from_dict(cls, data: dict) -> "VerificationConfig":
        keys = {"alpha", "mode", "max_splits", "grids_per_dim", "vertex_traversal_cap",
                "tolerance", "gradient_refine", "intermediate", "gradient_cases"}
        return cls(**{k: v for k, v in data.items() if k in keys})


# ---------------------------------------------------------------------------
# boundary extraction


@dataclass(frozen=True)
class BoundarySet:
    boxes: tuple
    grid_spec: tuple
    domain: HyperBox
    indices: tuple = ()
    fallback: tuple = ()
    model_hash: str = ""

    def __len__(self):
        return len(self.boxes)

    @property
    def lower(self) -> np.ndarray:
        return np.array([b.lower for b in self.boxes]).reshape(len(self.boxes), self.domain.dims)

    @property
    def upper(self) -> np.ndarray:
        return np.array([b.upper for b in self.boxes]).reshape(len(self.boxes), self.domain.dims)

    def contains(self, X, tol: float = 0.0) -> np.ndarray:
        """Whether each point lies in at least one boundary box."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if not self.boxes:
            return np.zeros(len(X), dtype=bool)
        lo, hi = self.lower, self.upper
        out = np.zeros(len(X), dtype=bool)
        for start in range(0, len(X), 4096):
            chunk = X[start:start + 4096, None, :]
            inside = np.all((chunk >= lo - tol) & (chunk <= hi + tol), axis=2)
            out[start:start + 4096] = inside.any(axis=1)
        return out

    def to_dict(self) -> dict:
        return {"grid_spec": list(self.grid_spec), "domain": self.domain.to_dict(),
                "model_hash": self.model_hash, "K": len(self.boxes),
                "boxes": [dict(b.to_dict(), index=list(i), fallback=bool(f))
                          for b, i, f in zip(self.boxes, self.indices, self.fallback)]}

    @classmethod
    def from_dict(cls, data: dict) -> "BoundarySet":
        try:
            boxes = tuple(HyperBox.from_dict(b) for b in data["boxes"])
            indices = tuple(tuple(b.get("index", ())) for b in data["boxes"])
            fallback = tuple(bool(b.get("fallback", False)) for b in data["boxes"])
            return cls(boxes, tuple(data["grid_spec"]), HyperBox.from_dict(data["domain"]),
                       indices, fallback, data.get("model_hash", ""))
        except (KeyError, TypeError, SpecificationError) as exc:
            raise SchemaError(f"malformed boundary document: {exc}") from exc


def _grid_edges(domain: HyperBox, grids: Sequence[int]):
    edges = []
    for lo, hi, k in zip(domain.lower, domain.upper, grids):
        e = lo + (hi - lo) * np.arange(k + 1) / k
        e[-1] = hi
        edges.append(e)
    return edges


def extract_boundary(net: ReluMlp, domain: HyperBox, grids_per_dim=20, *, probes: int = 0,
                     chunk: int = 1 << 18) -> BoundarySet:
    """Grid cells whose corner values of ``phi`` are not all of one strict sign.

    Every grid vertex is evaluated once. With ``probes > 0``, cells rejected by
    the corner test are probed at that many interior points and added
    (flagged as fallback) when a probe has the opposite sign.
    """
    n = domain.dims
    if net.input_dim != n:
        raise SpecificationError(f"domain is {n}-D, network expects {net.input_dim}")
    grids = tuple(int(g) for g in np.broadcast_to(np.asarray(grids_per_dim), (n,)))
    if any(g < 2 for g in grids):
        raise SpecificationError(f"need at least 2 grids per dimension, got {grids}")
    edges = _grid_edges(domain, grids)
    shape = tuple(g + 1 for g in grids)
    total = int(np.prod(shape))
    values = np.empty(total)
    for start in range(0, total, chunk):
        idx = np.unravel_index(np.arange(start, min(total, start + chunk)), shape)
        pts = np.stack([e[i] for e, i in zip(edges, idx)], axis=-1)
        values[start:start + len(pts)] = net(pts)
    if not np.all(np.isfinite(values)):
        bad = np.unravel_index(int(np.argmin(np.isfinite(values))), shape)
        raise NumericError(f"phi is not finite at grid vertex {bad}")
    values = values.reshape(shape)
    vmin = np.full(grids, np.inf)
    vmax = np.full(grids, -np.inf)
    for offset in itertools.product((0, 1), repeat=n):
        sl = tuple(slice(o, o + g) for o, g in zip(offset, grids))
        vmin = np.minimum(vmin, values[sl])
        vmax = np.maximum(vmax, values[sl])
    mixed = ~((vmin > 0) | (vmax < 0))
    flagged = np.zeros(grids, dtype=bool)
    if probes > 0:
        flagged = _probe_cells(net, edges, ~mixed, vmin > 0, probes)
    keep = mixed | flagged
    cells = np.argwhere(keep)
    boxes, indices, fallback = [], [], []
    for idx in cells:
        lo = [e[i] for e, i in zip(edges, idx)]
        hi = [e[i + 1] for e, i in zip(edges, idx)]
        boxes.append(HyperBox(lo, hi))
        indices.append(tuple(int(i) for i in idx))
        fallback.append(bool(flagged[tuple(idx)]))
    return BoundarySet(tuple(boxes), grids, domain, tuple(indices), tuple(fallback),
                       net.fingerprint())


def _probe_cells(net, edges, candidates, positive, probes):
    from scipy.stats import qmc

    flagged = np.zeros(candidates.shape, dtype=bool)
    cells = np.argwhere(candidates)
    if len(cells) == 0:
        return flagged
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        unit = qmc.Sobol(len(edges), scramble=False).random(max(probes, 1) + 1)[1:]
    lo = np.array([[e[i] for e, i in zip(edges, idx)] for idx in cells])
    hi = np.array([[e[i + 1] for e, i in zip(edges, idx)] for idx in cells])
    pts = lo[:, None, :] + unit[None, :, :] * (hi - lo)[:, None, :]
    vals = net(pts.reshape(-1, len(edges))).reshape(len(cells), -1)
    for idx, v in zip(cells, vals):
        pos = positive[tuple(idx)]
        if (pos and np.any(v <= 0)) or (not pos and np.any(v >= 0)):
            flagged[tuple(idx)] = True
    return flagged


# ---------------------------------------------------------------------------
# control selection and the boundary condition


def optimal_vertex_control(grad, model: DynamicsModel, x_ref, control_box: HyperBox):
    """Minimiser of ``grad . (f + g u)`` over the control box and its value.

    Entries of ``grad . g`` that are >= 0 take the lower control bound.
    """
    grad = np.asarray(grad, dtype=float).reshape(-1)
    x_ref = np.asarray(x_ref, dtype=float)
    coeff = grad @ model.g(x_ref)
    u_v = np.where(coeff >= 0, control_box.lower, control_box.upper)
    value = float(grad @ model.f(x_ref) + np.maximum(coeff, 0.0) @ control_box.lower
                  + np.minimum(coeff, 0.0) @ control_box.upper)
    return u_v, value


def exact_condition(net: ReluMlp, model: DynamicsModel, X, control_box: HyperBox,
                    alpha: float) -> np.ndarray:
    """``min_u phi_dot(x, u) + alpha phi(x)`` at each row of ``X`` (closed form)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    grads = net.gradients(X)
    coeff = np.einsum("bi,bij->bj", grads, model.g(X))
    drift = np.einsum("bi,bi->b", grads, model.f(X))
    value = (drift + np.maximum(coeff, 0.0) @ control_box.lower
             + np.minimum(coeff, 0.0) @ control_box.upper)
    return value + alpha * net(X)


def _reference_gradient(net: ReluMlp, box: HyperBox):
    center = box.center
    for k in range(4):
        x = np.clip(center + k * 1e-9 * np.where(box.widths > 0, 1.0, 0.0), box.lower, box.upper)
        try:
            return exact_gradient(net, x)
        except NonDifferentiableError:
            continue
    return None


def select_control(net: ReluMlp, model: DynamicsModel, box: HyperBox, control_box: HyperBox,
                   gb: GradientBounds):
    """Vertex control for a box, chosen from the gradient at the box center.

    Components where the center gradient gives no preference are decided by
    the midpoint of the gradient bounds, then by the lower-vertex rule.
    """
    center = box.center
    grad = _reference_gradient(net, box)
    gmat = model.g(center)
    fallback = gb.midpoint @ gmat
    coeff = fallback if grad is None else grad @ gmat
    coeff = np.where(coeff == 0, fallback, coeff)
    u_v = np.where(coeff >= 0, control_box.lower, control_box.upper)
    return u_v, (grad if grad is not None else gb.midpoint)


def _ranked_vertices(grad, model, box, control_box):
    center = box.center
    verts = vertices(control_box)
    fvec = grad @ model.f(center)
    gvec = grad @ model.g(center)
    scored = sorted(((float(fvec + gvec @ v), i, v) for i, v in enumerate(verts)),
                    key=lambda t: (t[0], t[1]))
    return [v for _, _, v in scored]


def assemble_condition(gb: GradientBounds, db: DynamicsBounds, net: Optional[ReluMlp],
                       alpha: float) -> CompositeExpression:
    """Upper-bounding ReLU expression for ``grad phi . h(x, u_v) + alpha phi(x)``."""
    n = db.W.shape[1]
    if gb.d_lo.size != db.W.shape[0] or db.W.shape[0] != n:
        raise SpecificationError(
            f"gradient bounds of length {gb.d_lo.size} do not match dynamics of shape {db.W.shape}")
    if alpha < 0:
        raise SpecificationError("alpha must be nonnegative")
    hi_pos, lo_pos, hi_neg, lo_neg = split_pos_neg(gb)
    W = db.W
    terms = (
        ReluTerm(hi_pos, W, db.b_hi),
        ReluTerm(0.0 - lo_pos, 0.0 - W, 0.0 - db.b_hi),
        ReluTerm(hi_neg, W, db.b_lo),
        ReluTerm(0.0 - lo_neg, 0.0 - W, 0.0 - db.b_lo),
    )
    if alpha > 0 and net is not None:
        return CompositeExpression(terms, net, float(alpha), 0.0, TERM_LABELS)
    return CompositeExpression(terms, None, 0.0, 0.0, TERM_LABELS)


def evaluate_condition(expr: CompositeExpression, box: HyperBox, mode=Mode.SYMBOLIC, *,
                       intermediate: str = "ibp", network_form=None, network_interval=None) -> float:
    """Sound upper bound of the assembled condition over ``box``.

    ``symbolic`` keeps the dynamics bounds affine in ``x``; ``concrete`` first
    replaces them by constants; ``ibp`` additionally bounds the network term
    by interval propagation.
    """
    mode = Mode(mode)
    if mode is Mode.SYMBOLIC:
        return crown_upper_bound(expr, box, intermediate=intermediate,
                                 network_form=network_form, network_interval=network_interval)
    degraded = concretize_terms(expr, box)
    if mode is Mode.CONCRETE:
        return crown_upper_bound(degraded, box, intermediate=intermediate,
                                 network_form=network_form, network_interval=network_interval)
    return ibp_upper_bound(degraded, box, network_interval)


# ---------------------------------------------------------------------------
# branch and bound


@dataclass
class NodeRecord:
    depth: int
    index: int
    box: HyperBox
    u_v: np.ndarray
    bound: float
    verified: bool
    gradient: Optional[GradientBounds] = None
    dynamics: Optional[DynamicsBounds] = None
    expression: Optional[CompositeExpression] = None
    controls_tried: int = 1
    gradient_cases: bool = False

    def to_dict(self) -> dict:
        doc = {"depth": self.depth, "index": self.index, "box": self.box.to_dict(),
               "u_v": self.u_v.tolist(), "bound": self.bound,
               "status": Status.VERIFIED.value if self.verified else Status.UNKNOWN.value,
               "controls_tried": self.controls_tried, "gradient_cases": self.gradient_cases}
        if self.gradient is not None:
            doc["gradient_bounds"] = self.gradient.to_dict()
        if self.dynamics is not None:
            doc["dynamics_bounds"] = self.dynamics.to_dict()
        if self.expression is not None:
            doc["condition"] = self.expression.pruned().to_dict()
        return doc


@dataclass
class VerificationVerdict:
    status: Status
    margin: float
    splits_used: int
    u_v: np.ndarray
    u_v_history: list = field(default_factory=list)
    verified_boxes: list = field(default_factory=list)
    unresolved_boxes: list = field(default_factory=list)
    nodes: list = field(default_factory=list)
    counterexample: Optional[object] = None
    elapsed: float = 0.0

    @property
    def verified(self) -> bool:
        return self.status is Status.VERIFIED

    def to_dict(self, box: Optional[HyperBox] = None, conditions: bool = False) -> dict:
        doc = {}
        if box is not None:
            doc["box"] = box.to_dict()
        doc.update({"status": self.status.value, "margin": self.margin,
                    "splits": self.splits_used, "u_v": self.u_v.tolist()})
        if conditions:
            doc["conditions"] = [n.to_dict() for n in self.nodes]
        return doc


def _split_dimension(box: HyperBox, scale: np.ndarray) -> Optional[int]:
    widths = box.widths
    best, best_key = None, None
    for i, (w, s) in enumerate(zip(widths, scale)):
        if w <= 0:
            continue
        key = (w / s if s > 0 else w, w)
        if best_key is None or key > best_key:
            best, best_key = i, key
    return best


class _NodeEvaluator:
    def __init__(self, net, model, control_box, config: VerificationConfig):
        self.net = net
        self.model = model
        self.control_box = control_box
        self.config = config

    def __call__(self, box: HyperBox):
        cfg = self.config
        scheme = cfg.scheme
        gb = gradient_bounds(self.net, box, cfg.gradient_refine, scheme)
        network_form = network_interval = None
        if cfg.alpha > 0:
            pre, network_interval = ibp_bounds(self.net, box)
            if cfg.mode is not Mode.IBP:
                if scheme != "ibp":
                    pre = preactivation_bounds(self.net, box, scheme)
                network_form = network_linear_upper(self.net, box, pre)
        u_v, ref_grad = select_control(self.net, self.model, box, self.control_box, gb)
        candidates = [u_v]
        if cfg.vertex_traversal_cap > 0:
            ranked = _ranked_vertices(ref_grad, self.model, box, self.control_box)
            others = [v for v in ranked if not np.array_equal(v, u_v)]
            candidates += others[:cfg.vertex_traversal_cap]
        def bound_for(g, db):
            expr = assemble_condition(g, db, self.net, cfg.alpha)
            value = evaluate_condition(expr, box, cfg.mode, intermediate=scheme,
                                       network_form=network_form,
                                       network_interval=network_interval)
            return value, expr

        best = None
        tried = 0
        evaluated = []
        for u in candidates:
            tried += 1
            db = taylor_bounds(self.model, box, u)
            bound, expr = bound_for(gb, db)
            evaluated.append((np.asarray(u, dtype=float), db, expr))
            if best is None or bound < best[0]:
                best = (bound,) + evaluated[-1]
            if bound <= cfg.tolerance:
                break
        cases_used = False
        if best[0] > cfg.tolerance and cfg.gradient_cases > 0:
            # split the gradient bound by activation pattern of the unstable neurons
            cases = gradient_cases(self.net, box, cfg.gradient_cases, hull=gb,
                                   intermediate=scheme)
            if cases is not None:
                for u, db, expr in evaluated:
                    worst = max((bound_for(c, db)[0] for c in cases), default=-math.inf)
                    if worst < best[0]:
                        best = (worst, u, db, expr)
                        cases_used = True
                    if worst <= cfg.tolerance:
                        break
        bound, u, db, expr = best
        return bound, u, gb, db, expr, tried, cases_used


def verify_box(net: ReluMlp, model: DynamicsModel, box: HyperBox, control_box: HyperBox,
               config: VerificationConfig, scale=None,
               observer: Optional[Callable] = None) -> VerificationVerdict:
    """Breadth-first branch and bound on one box.

    Each node picks its own vertex control; failing nodes are halved along the
    dimension with the largest width relative to ``scale`` (defaults to the
    widths of ``box``). Nodes left after the split budget is spent are still
    bounded, and the box is unknown if any of them fails.
    """
    start = time.perf_counter()
    scale = np.asarray(box.widths if scale is None else scale, dtype=float)
    evaluate = _NodeEvaluator(net, model, control_box, config)
    queue = deque([(0, 0, box)])
    created = 1
    splits = 0
    verified, unresolved, history, nodes = [], [], [], []
    verified_bounds, unresolved_bounds = [], []
    root_u = None
    while queue:
        depth, index, node = queue.popleft()
        bound, u_v, gb, db, expr, tried, cases_used = evaluate(node)
        if root_u is None:
            root_u = u_v
        history.append(u_v.tolist())
        ok = bound <= config.tolerance
        if config.record:
            nodes.append(NodeRecord(depth, index, node, u_v, bound, ok, gb, db, expr, tried,
                                    cases_used))
        if ok:
            verified.append(node)
            verified_bounds.append(bound)
        else:
            dim = _split_dimension(node, scale) if splits < config.max_splits else None
            if dim is None:
                unresolved.append(node)
                unresolved_bounds.append(bound)
            else:
                left, right = split_box(node, dim)
                queue.append((depth + 1, created, left))
                queue.append((depth + 1, created + 1, right))
                created += 2
                splits += 1
        if observer is not None:
            observer(list(verified), [q[2] for q in queue], list(unresolved))
    if unresolved:
        status, margin = Status.UNKNOWN, max(unresolved_bounds)
    else:
        status, margin = Status.VERIFIED, max(verified_bounds)
    return VerificationVerdict(status, float(margin), splits, root_u, history, verified,
                               unresolved, nodes, None, time.perf_counter() - start)


@dataclass
class VerificationSummary:
    verdicts: list
    boxes: list
    config: VerificationConfig
    total_time: float = 0.0

    @property
    def K(self) -> int:
        return len(self.boxes)

    @property
    def vacuous(self) -> bool:
        return self.K == 0

    @property
    def n_verified(self) -> int:
        return sum(v.verified for v in self.verdicts)

    @property
    def verified_rate(self) -> float:
        return 1.0 if self.K == 0 else self.n_verified / self.K

    @property
    def box_times(self) -> list:
        return [v.elapsed for v in self.verdicts]


def _verify_chunk(args):
    net, model, boxes, control_box, config, scale = args
    return [verify_box(net, model, b, control_box, config, scale) for b in boxes]


def verify_all(net: ReluMlp, model: DynamicsModel, boundary, config: VerificationConfig, *,
               control_box: Optional[HyperBox] = None, jobs: int = 1) -> VerificationSummary:
    """Verify every boundary box; verdicts come back in boundary order.

    ``boundary`` is a BoundarySet or a sequence of boxes. With ``jobs > 1``
    boxes are distributed over worker processes; results do not depend on
    the worker count.
    """
    start = time.perf_counter()
    control_box = control_box if control_box is not None else model.control_domain
    if isinstance(boundary, BoundarySet):
        boxes = list(boundary.boxes)
        scale = boundary.domain.widths
    else:
        boxes = list(boundary)
        scale = model.state_domain.widths
    if jobs <= 1 or len(boxes) <= 1:
        verdicts = [verify_box(net, model, b, control_box, config, scale) for b in boxes]
    else:
        n_chunks = min(len(boxes), jobs * 4)
        chunks = [boxes[i::n_chunks] for i in range(n_chunks)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_verify_chunk,
                                    [(net, model, c, control_box, config, scale) for c in chunks]))
        verdicts = [None] * len(boxes)
        for i, res in enumerate(results):
            for j, v in enumerate(res):
                verdicts[i + j * n_chunks] = v
    return VerificationSummary(verdicts, boxes, config, time.perf_counter() - start)
