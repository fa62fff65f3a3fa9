"""Shared builders for tests: random corpora and small oracles."""

import itertools

import numpy as np

from cbfverify import HyperBox, ReluMlp, extract_boundary, make_model, random_cbf_network

CORPUS_MODELS = ("double_integrator_1d", "point_robot", "dubins_car")


def random_box(rng, n, lo=-1.0, hi=1.0, max_width=0.5):
    a = rng.uniform(lo, hi, n)
    w = rng.uniform(0.0, max_width, n)
    return HyperBox(np.minimum(a, hi - w), np.minimum(a, hi - w) + w)


def random_subbox(rng, domain: HyperBox, frac=0.1):
    w = domain.widths * rng.uniform(0.2, 1.0, domain.dims) * frac
    lo = domain.lower + rng.uniform(0, 1, domain.dims) * (domain.widths - w)
    return HyperBox(lo, lo + w)


def random_net(rng, sizes=(6, 5, 1), n_in=2):
    dims = (n_in,) + tuple(sizes)
    ws = [rng.normal(size=(o, i)) for i, o in zip(dims[:-1], dims[1:])]
    bs = [rng.normal(scale=0.5, size=o) for o in dims[1:]]
    return ReluMlp(ws, bs)


def brute_force_min(grad, model, x, control_box):
    """Minimum of ``grad . (f + g u)`` over every control vertex."""
    best = None
    for u in itertools.product(*zip(control_box.lower, control_box.upper)):
        v = float(grad @ (model.f(x) + model.g(x) @ np.array(u)))
        best = v if best is None else min(best, v)
    return best


def build_corpus(n_nets=50, boxes_per_net=6, grids=20, seed=7000):
    """Random CBF networks on each corpus model with evenly spaced boundary boxes.

    Even seeds use the small shape, odd seeds the default shape.
    """
    corpus = []
    for k in range(n_nets):
        size = "small" if k % 2 == 0 else "default"
        for name in CORPUS_MODELS:
            model = make_model(name)
            net = random_cbf_network(model.state_dim, size, domain=model.state_domain,
                                     rng=seed + k)
            boundary = extract_boundary(net, model.state_domain, grids)
            if len(boundary) == 0:
                continue
            idx = np.unique(np.linspace(0, len(boundary) - 1,
                                        min(boxes_per_net, len(boundary))).round().astype(int))
            corpus.append((net, model, [boundary.boxes[i] for i in idx]))
    return corpus


def bisection_roots(net, domain, rng, n_roots):
    """Roots of ``net`` on segments between sampled points of opposite sign."""
    roots = []
    while sum(len(r) for r in roots) < n_roots:
        X = domain.sample(rng, 20_000)
        v = net(X)
        pos, neg = X[v > 0], X[v <= 0]
        k = min(len(pos), len(neg))
        if k == 0:
            raise AssertionError("network has no sign change on the domain")
        a, b = pos[rng.permutation(len(pos))[:k]], neg[rng.permutation(len(neg))[:k]]
        for _ in range(60):
            mid = 0.5 * (a + b)
            vm = net(mid)
            a = np.where((vm > 0)[:, None], mid, a)
            b = np.where((vm > 0)[:, None], b, mid)
        roots.append(b)
    return np.concatenate(roots)[:n_roots]
