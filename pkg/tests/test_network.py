
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cbfverify import (HyperBox, NonDifferentiableError, ReluMlp, SchemaError, SpecificationError,
                       exact_gradient, forward, load_model, random_cbf_network, save_model)
from cbfverify.network import MODEL_SIZES
from conftest import ROOT2
from helpers import random_net


def test_example_network_values(e1_net):
    # phi(0) = -0.05; unit 1 active only
    assert e1_net([0.0, 0.0]) == pytest.approx(-0.05)
    assert e1_net([0.1, 0.1]) == pytest.approx(ROOT2 * 0.1 + 0.1 + ROOT2 * 0.1 - 0.1 - 0.05)
    np.testing.assert_allclose(exact_gradient(e1_net, [0.1, 0.1]), [2 * ROOT2, 0.0])
    np.testing.assert_allclose(exact_gradient(e1_net, [0.01, -0.1]), [ROOT2, -1.0])
    np.testing.assert_allclose(exact_gradient(e1_net, [-0.1, 0.05]), [0.0, 0.0])


def test_kink_raises(e1_net):
    with pytest.raises(NonDifferentiableError):
        exact_gradient(e1_net, [0.0, 0.0])


def test_batch_gradients_match_exact(rng):
    net = random_net(rng, (7, 5, 1), 3)
    X = rng.normal(size=(50, 3))
    G = net.gradients(X)
    for x, g in zip(X, G):
        np.testing.assert_allclose(exact_gradient(net, x), g, atol=1e-12)


@given(st.integers(0, 10_000))
def test_gradient_matches_finite_difference(seed):
    rng = np.random.default_rng(seed)
    net = random_net(rng, (5, 4, 1), 2)
    x = rng.normal(size=2)
    try:
        g = exact_gradient(net, x, kink_tol=1e-4)
    except NonDifferentiableError:
        return
    h = 1e-7
    fd = [(net(x + h * e) - net(x - h * e)) / (2 * h) for e in np.eye(2)]
    np.testing.assert_allclose(g, fd, atol=1e-5)


def test_forward_trace(e1_net):
    tr = forward(e1_net, [0.1, 0.0])
    assert len(tr.preactivations) == 1
    assert tr.output == pytest.approx(2 * ROOT2 * 0.1 - 0.05)
    with pytest.raises(SpecificationError):
        forward(e1_net, [1.0, 2.0, 3.0])


def test_constructor_validation():
    with pytest.raises(SpecificationError):
        ReluMlp([np.ones((2, 2)), np.ones((1, 3))], [np.zeros(2), np.zeros(1)])
    with pytest.raises(SpecificationError):
        ReluMlp([np.ones((2, 2))], [np.zeros(3)])
    with pytest.raises(SpecificationError):
        ReluMlp([np.full((1, 1), np.nan)], [np.zeros(1)])


def test_roundtrip(tmp_path, e1_net):
    path = tmp_path / "m.json"
    save_model(e1_net, path)
    again = load_model(path)
    assert again == e1_net and again.fingerprint() == e1_net.fingerprint()


def test_chain_break_message():
    doc = {"layers": [{"weight": [[1, 2]], "bias": [0]}, {"weight": [[1, 1]], "bias": [0]}]}
    with pytest.raises(SchemaError, match=r"layers\[0\].*layers\[1\]"):
        ReluMlp.from_dict(doc)


@pytest.mark.parametrize("doc,fragment", [
    ({}, "layers"),
    ({"layers": [{"bias": [0]}]}, "weight"),
    ({"layers": [{"weight": [[1, "a"]], "bias": [0]}]}, "numeric"),
    ({"layers": [{"weight": [1, 2], "bias": [0]}]}, "2-D"),
    ({"layers": [{"weight": [[1e400]], "bias": [0]}]}, "non-finite"),
])
def test_schema_errors(doc, fragment):
    with pytest.raises(SchemaError, match=fragment):
        ReluMlp.from_dict(doc)


def test_load_reports_position(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"layers": [\n  {"weight": [[1]], }\n]}')
    with pytest.raises(SchemaError, match=r"bad.json:2:\d+"):
        load_model(path)


@pytest.mark.parametrize("size", list(MODEL_SIZES))
def test_random_cbf_crosses_zero(size):
    domain = HyperBox([0, 0, 0], [4, 4, 3])
    net = random_cbf_network(3, size, domain=domain, rng=3)
    assert net.layer_sizes == MODEL_SIZES[size]
    vals = net(domain.sample(np.random.default_rng(1), 4000))
    assert vals.min() < 0 < vals.max()
    assert random_cbf_network(3, size, domain=domain, rng=3) == net
