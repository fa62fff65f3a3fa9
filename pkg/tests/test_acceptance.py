"""Acceptance criteria, each at its stated tolerance and runtime budget.

Every test prints one ``[PASS]``/``[FAIL]`` line; the lines are repeated in
the terminal summary.
"""

import itertools
import json
import time

import numpy as np
import pytest

from cbfverify import (DoubleIntegrator1D, HyperBox, Mode, VerificationConfig,
                       assemble_condition, evaluate_condition, example_1_network,
                       extract_boundary, gradient_bounds, ibp_bounds, make_model,
                       optimal_vertex_control, random_cbf_network, save_model, taylor_bounds,
                       verify_all, verify_box)
from cbfverify.cli import main as cli_main
from cbfverify.dynamics import LinearModel
from cbfverify.falsifier import falsify_box
from cbfverify.relaxation import network_linear_upper, preactivation_arrays
from cbfverify.verifier import TERM_LABELS, exact_condition
from conftest import ROOT2
from helpers import (CORPUS_MODELS, bisection_roots, brute_force_min, build_corpus, random_net,
                     random_subbox)

ALPHAS = (0.1, 0.5, 1.0)
MODES = (Mode.SYMBOLIC, Mode.CONCRETE, Mode.IBP)
CORPUS_SPLITS = 8


@pytest.fixture(scope="module")
def corpus_run():
    """Verdicts of every corpus box for each (alpha, mode), with equal split budgets."""
    start = time.perf_counter()
    corpus = build_corpus(n_nets=50, boxes_per_net=6, grids=20)
    verdicts = {}
    for alpha in ALPHAS:
        for mode in MODES:
            cfg = VerificationConfig(alpha=alpha, mode=mode, max_splits=CORPUS_SPLITS)
            verdicts[alpha, mode] = [verify_all(net, model, boxes, cfg).verdicts
                                     for net, model, boxes in corpus]
    return corpus, verdicts, time.perf_counter() - start


# ---------------------------------------------------------------------------


def test_01_example_one_gradient_and_control(record_acceptance):
    start = time.perf_counter()
    net, model = example_1_network(), DoubleIntegrator1D()
    box = HyperBox([-0.1, -0.1], [0.0, 0.1])
    gb = gradient_bounds(net, box)
    err = max(np.max(np.abs(gb.d_lo - [0.0, -1.0])), np.max(np.abs(gb.d_hi - [ROOT2, 1.0])))
    rng = np.random.default_rng(1)
    X = box.sample(rng, 5000)
    pre = X @ net.weights[0].T
    first = (pre[:, 0] > 0) & (pre[:, 1] <= 0)
    second = (pre[:, 1] > 0) & (pre[:, 0] <= 0)
    controls = {True: [], False: []}
    for x, is_first in zip(X[first | second], first[first | second]):
        grad = net.gradients(x[None, :])[0]
        controls[bool(is_first)].append(optimal_vertex_control(grad, model, x,
                                                               model.control_domain)[0][0])
    elapsed = time.perf_counter() - start
    passed = (err <= 1e-12 and len(controls[True]) > 0 and set(controls[True]) == {-1.0}
              and set(controls[False]) <= {1.0} and elapsed < 1.0)
    record_acceptance(1, "Example-1 golden", passed,
                      f"max |bound error| {err:.1e}, u_v=-1 on {len(controls[True])} points, "
                      f"{elapsed:.2f} s")
    assert passed


def _merged(expr):
    """(t1, t2+t4 coefficient, t3 coefficient) of a linear-dynamics condition."""
    t1, t2, t3, t4 = expr.terms
    np.testing.assert_array_equal(t2.weight, t4.weight)
    np.testing.assert_array_equal(t2.bias, t4.bias)
    return t1, t2, t2.coef + t4.coef, t3.coef


def test_02_example_two_golden(record_acceptance):
    start = time.perf_counter()
    net, model = example_1_network(), DoubleIntegrator1D()
    box = HyperBox([-0.1, -0.1], [0.0, 0.1])
    cfg = VerificationConfig(alpha=0.5, max_splits=1000, record=True)
    verdict = verify_box(net, model, box, model.control_domain, cfg)
    nodes = {n.index: n for n in verdict.nodes}
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    # printed expressions: (u_v, t1 coefficient, t1 bias, negative-side coefficient, child box)
    printed = {0: (-1.0, [ROOT2, 1.0], [0.0, -1.0], [0.0, 1.0], box),
               1: (1.0, [ROOT2, 0.0], [0.0, 1.0], [0.0, 1.0], HyperBox([-0.1, -0.1], [0.0, 0.0])),
               2: (-1.0, [ROOT2, 1.0], [0.0, -1.0], [0.0, 0.0], HyperBox([-0.1, 0.0], [0.0, 0.1]))}
    errs, checks = [], []
    for index, (u, c1, b1, cneg, nbox) in printed.items():
        node = nodes[index]
        t1, t2, neg, t3 = _merged(node.expression)
        checks += [node.u_v[0] == u, node.box == nbox, node.expression.labels == TERM_LABELS,
                   node.expression.network is net, node.expression.scale == 0.5]
        errs += [np.abs(t1.coef - c1).max(), np.abs(t1.weight - A).max(),
                 np.abs(t1.bias - b1).max(), np.abs(neg - cneg).max(), np.abs(t3).max(),
                 np.abs(t2.weight + A).max(), np.abs(t2.bias + np.array(b1)).max()]
    err = max(errs)
    root_bound = nodes[0].bound
    root_direct = evaluate_condition(nodes[0].expression, box, Mode.SYMBOLIC)
    elapsed = time.perf_counter() - start
    passed = (all(checks) and err <= 1e-12 and root_bound > 0 and root_direct > 0
              and verdict.verified and verdict.splits_used <= 1000 and elapsed < 10.0)
    record_acceptance(2, "Example-2 golden", passed,
                      f"coefficient error {err:.1e}, root bound {root_bound:.4f}, "
                      f"{verdict.status.value} after {verdict.splits_used} splits, {elapsed:.2f} s")
    assert passed


class _RandomLinear(LinearModel):
    name = "random_linear"

    def __init__(self, A, B, control_box):
        self.A, self.B = np.asarray(A, dtype=float), np.asarray(B, dtype=float)
        self._control = control_box
        super().__init__()

    def default_state_domain(self):
        n = self.A.shape[0]
        return HyperBox(-np.ones(n), np.ones(n))

    def default_control_domain(self):
        return self._control


def test_03_closed_form_control_oracle(record_acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    worst, count = 0.0, 0
    for i in range(1000):
        m = 1 + i % 3
        n = int(rng.integers(2, 5))
        lo = rng.uniform(-2, 0, m)
        cbox = HyperBox(lo, lo + rng.uniform(0.1, 2, m))
        model = _RandomLinear(rng.normal(size=(n, n)), rng.normal(size=(n, m)), cbox)
        net = random_net(rng, (6, 5, 1), n)
        x = rng.uniform(-1, 1, n)
        grad = net.gradients(x[None, :])[0]
        _, val = optimal_vertex_control(grad, model, x, cbox)
        worst = max(worst, abs(val - brute_force_min(grad, model, x, cbox)))
        count += 1
    elapsed = time.perf_counter() - start
    passed = worst <= 1e-12 and elapsed < 30.0
    record_acceptance(3, "closed-form control vs vertex enumeration", passed,
                      f"{count} instances, max error {worst:.1e}, {elapsed:.1f} s")
    assert passed


def test_04_soundness(corpus_run, record_acceptance):
    corpus, verdicts, corpus_time = corpus_run
    start = time.perf_counter()
    n_pairs = len(corpus)
    models = {model.name for _, model, _ in corpus}
    checked = violations = falsifier_hits = 0
    worst = -np.inf
    for alpha in ALPHAS:
        for k, (net, model, boxes) in enumerate(corpus):
            for b, box in enumerate(boxes):
                if not any(verdicts[alpha, mode][k][b].verified for mode in MODES):
                    continue
                checked += 1
                rng = np.random.default_rng([int(10 * alpha), k, b])
                X = box.sample(rng, 10_000)
                values = exact_condition(net, model, X, model.control_domain, alpha)
                worst = max(worst, float(values.max()))
                violations += int(np.sum(values > 0))
                if falsify_box(net, model, box, model.control_domain, alpha, 1024,
                               box_index=b, seed=k) is not None:
                    falsifier_hits += 1
    elapsed = time.perf_counter() - start
    passed = (n_pairs >= 50 * len(CORPUS_MODELS) and models == set(CORPUS_MODELS)
              and checked > 0
              and violations == 0 and falsifier_hits == 0 and elapsed + corpus_time / 3 < 600)
    record_acceptance(4, "soundness on the random corpus", passed,
                      f"{n_pairs} (network, model) pairs, {checked} verified boxes x 10^4 "
                      f"samples, {violations} violations, {falsifier_hits} falsifier hits, "
                      f"max condition {worst:.3g}, {elapsed:.0f} s sampling")
    assert passed


def test_05_containment(record_acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    tol = 1e-9
    counts = {"gradient": 0, "taylor": 0, "ibp": 0, "crown": 0}
    bad = dict.fromkeys(counts, 0)
    for i in range(300):
        name = ("double_integrator_1d", "point_robot", "dubins_car", "planar_quadrotor")[i % 4]
        model = make_model(name)
        net = random_cbf_network(model.state_dim, ("small", "default")[i % 2],
                                 domain=model.state_domain, rng=i)
        box = random_subbox(rng, model.state_domain, (0.02, 0.1, 0.3)[i % 3])
        X = box.sample(rng, 500)

        gb = gradient_bounds(net, box, intermediate=("ibp", "crown")[i % 2])
        G = net.gradients(X)
        bad["gradient"] += int(np.sum(np.any((G < gb.d_lo - tol) | (G > gb.d_hi + tol), axis=1)))
        counts["gradient"] += len(X)

        u = model.control_domain.sample(rng, 1)[0]
        db = taylor_bounds(model, box, u)
        H = np.array([model.h(x, u) for x in X])
        bad["taylor"] += int(np.sum(np.any((H < db.lower(X) - tol) | (H > db.upper(X) + tol),
                                           axis=1)))
        counts["taylor"] += len(X)

        phi = net(X)
        _, out = ibp_bounds(net, box)
        bad["ibp"] += int(np.sum((phi < out.lo - tol) | (phi > out.hi + tol)))
        counts["ibp"] += len(X)
        w, c = network_linear_upper(net, box)
        pre_lo, pre_hi = preactivation_arrays(net, box.lower[None, :], box.upper[None, :], "crown")
        Z = X
        for layer, (W, bias) in enumerate(zip(net.weights[:-1], net.biases[:-1])):
            Z = Z @ W.T + bias
            bad["crown"] += int(np.sum(np.any((Z < pre_lo[layer][0] - tol)
                                              | (Z > pre_hi[layer][0] + tol), axis=1)))
            Z = np.maximum(Z, 0.0)
        bad["crown"] += int(np.sum(phi > X @ w + c + tol))
        counts["crown"] += len(X)
    elapsed = time.perf_counter() - start
    passed = sum(bad.values()) == 0 and elapsed < 300
    record_acceptance(5, "containment suites", passed,
                      ", ".join(f"{k} {bad[k]}/{counts[k]}" for k in counts)
                      + f" violations, {elapsed:.1f} s")
    assert passed


def test_06_concrete_equals_presconcretized_symbolic(record_acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(6)
    worst = 0.0
    for i in range(100):
        model = make_model(("double_integrator_1d", "point_robot", "dubins_car",
                            "planar_quadrotor")[i % 4])
        net = random_cbf_network(model.state_dim, "small", domain=model.state_domain, rng=600 + i)
        box = random_subbox(rng, model.state_domain, 0.1)
        u = model.control_domain.sample(rng, 1)[0]
        db = taylor_bounds(model, box, u)
        gb = gradient_bounds(net, box)
        concrete = evaluate_condition(assemble_condition(gb, db, net, 0.5), box, Mode.CONCRETE)
        symbolic = evaluate_condition(assemble_condition(gb, db.concretized(), net, 0.5), box,
                                      Mode.SYMBOLIC)
        worst = max(worst, abs(concrete - symbolic))
    elapsed = time.perf_counter() - start
    passed = worst <= 1e-12 and elapsed < 60
    record_acceptance(6, "concrete mode equals symbolic on constant dynamics bounds", passed,
                      f"100 boxes, max difference {worst:.1e}, {elapsed:.1f} s")
    assert passed


def test_07_ordering_trend(corpus_run, record_acceptance):
    corpus, verdicts, corpus_time = corpus_run
    n_boxes = sum(len(boxes) for _, _, boxes in corpus)
    rates = {key: sum(v.verified for vs in runs for v in vs) / n_boxes
             for key, runs in verdicts.items()}
    mean = {mode: float(np.mean([rates[a, mode] for a in ALPHAS])) for mode in MODES}
    ordered = all(rates[a, Mode.SYMBOLIC] >= rates[a, Mode.CONCRETE] >= rates[a, Mode.IBP]
                  for a in ALPHAS)
    gap = mean[Mode.SYMBOLIC] - mean[Mode.IBP]
    passed = ordered and gap >= 0.05 and corpus_time < 900
    table = "; ".join(f"alpha={a:g} " + "/".join(f"{rates[a, m]:.3f}" for m in MODES)
                      for a in ALPHAS)
    record_acceptance(7, "ordering symbolic >= concrete >= ibp", passed,
                      f"{n_boxes} boxes, {CORPUS_SPLITS} splits, rates (sym/conc/ibp) {table}; "
                      f"mean gap {100 * gap:.1f} points, {corpus_time:.0f} s")
    assert passed


def test_08_boundary_completeness(record_acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(8)
    grids = 20
    total = missed = 0
    for k in range(10):
        model = make_model(CORPUS_MODELS[k % 3])
        domain = model.state_domain
        net = random_cbf_network(model.state_dim, ("small", "default")[k % 2], domain=domain,
                                 rng=800 + k)
        boundary = extract_boundary(net, domain, grids)
        cells = {tuple(ix) for ix in boundary.indices}
        roots = bisection_roots(net, domain, rng, 10_000)
        step = domain.widths / grids
        rel = (roots - domain.lower) / step
        for r, pt in zip(rel, roots):
            # every cell whose closure holds the root
            ranges = [sorted({min(max(int(np.floor(c - 1e-9)), 0), grids - 1),
                              min(max(int(np.floor(c + 1e-9)), 0), grids - 1)}) for c in r]
            if not any(ix in cells for ix in itertools.product(*ranges)):
                missed += 1
        total += len(roots)
    elapsed = time.perf_counter() - start
    passed = total >= 100_000 and missed == 0 and elapsed < 120
    record_acceptance(8, "boundary extraction completeness", passed,
                      f"{total} roots over 10 networks at {grids} grids, {missed} outside, "
                      f"{elapsed:.1f} s")
    assert passed


def test_09_cli_determinism(tmp_path, record_acceptance):
    start = time.perf_counter()
    model = make_model("dubins_car")
    save_model(random_cbf_network(3, "small", domain=model.state_domain, rng=900),
               tmp_path / "net.json")
    (tmp_path / "scenario.json").write_text(json.dumps({"model": "dubins_car"}))
    common = ["--model", str(tmp_path / "net.json"), "--scenario", str(tmp_path / "scenario.json")]
    assert cli_main(["extract", *common, "--grids", "6", "--out", str(tmp_path / "b.json")]) == 0
    texts = []
    for jobs in (1, 8):
        out = tmp_path / f"jobs{jobs}.json"
        assert cli_main(["verify", *common, "--boundary", str(tmp_path / "b.json"),
                         "--max-splits", "10", "--jobs", str(jobs), "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        doc.pop("timing")
        doc["manifest"].pop("timestamps")
        texts.append(json.dumps(doc, indent=1).encode())
    K = json.loads((tmp_path / "jobs1.json").read_text())["K"]
    elapsed = time.perf_counter() - start
    passed = texts[0] == texts[1] and K > 8 and elapsed < 60
    record_acceptance(9, "--jobs 1 and --jobs 8 byte-identical", passed,
                      f"K={K}, {len(texts[0])} bytes without timing fields, {elapsed:.1f} s")
    assert passed


def test_10_remainder_scaling(record_acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(10)
    ratios = {}
    for name in ("dubins_car", "planar_quadrotor"):
        model = make_model(name)
        vals = []
        for _ in range(50):
            box = random_subbox(rng, model.state_domain, 0.2)
            half = HyperBox(box.center - box.widths / 4, box.center + box.widths / 4)
            u = model.control_domain.sample(rng, 1)[0]
            full_rem = np.sum(taylor_bounds(model, box, u).b_hi - taylor_bounds(model, box, u).b_lo)
            half_rem = np.sum(taylor_bounds(model, half, u).b_hi
                              - taylor_bounds(model, half, u).b_lo)
            vals.append(full_rem / half_rem)
        ratios[name] = float(np.mean(vals))
    elapsed = time.perf_counter() - start
    passed = all(3.5 <= r <= 4.5 for r in ratios.values()) and elapsed < 60
    record_acceptance(10, "Taylor remainder shrinks quadratically", passed,
                      ", ".join(f"{k} ratio {v:.3f}" for k, v in ratios.items())
                      + f", {elapsed:.2f} s")
    assert passed
