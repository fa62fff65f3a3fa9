import numpy as np
import pytest
from sklearn.base import clone
from sklearn.pipeline import Pipeline

from cbfverify import BoundaryExtractor, CBFVerifier, Falsifier, HyperBox
from cbfverify.exceptions import SchemaError, SpecificationError

DOMAIN = np.array([[-1.0, -1.0], [1.0, 1.0]])


def test_pipeline_matches_direct_call(e1_net):
    pipe = Pipeline([("extract", BoundaryExtractor(e1_net, grids_per_dim=8)),
                     ("verify", CBFVerifier(e1_net, "double_integrator_1d", max_splits=20))])
    pipe.fit(DOMAIN)
    boxes = pipe.named_steps["extract"].fit_transform(DOMAIN)
    assert boxes.ndim == 3 and boxes.shape[1:] == (2, 2)
    verifier = pipe.named_steps["verify"]
    assert len(verifier.verdicts_) == len(boxes)
    pred = pipe.predict(DOMAIN)
    assert pred.dtype == bool and pred.shape == (len(boxes),)
    assert pipe.score(DOMAIN) == pytest.approx(verifier.verified_rate_)
    margins = verifier.decision_function(boxes)
    np.testing.assert_array_equal(margins <= 0, pred)


def test_get_params_and_clone(e1_net):
    est = CBFVerifier(e1_net, "double_integrator_1d", alpha=0.1, mode="ibp")
    params = est.get_params()
    assert params["alpha"] == 0.1 and params["mode"] == "ibp"
    other = clone(est).set_params(alpha=1.0)
    assert other.alpha == 1.0 and est.alpha == 0.1


def test_accepts_box_lists_and_flat_arrays(e1_net):
    boxes = [HyperBox([-0.1, -0.1], [0.0, 0.1]), HyperBox([0.0, 0.0], [0.1, 0.1])]
    est = CBFVerifier(e1_net, "double_integrator_1d", max_splits=10).fit(boxes)
    flat = np.array([[*b.lower, *b.upper] for b in boxes])
    np.testing.assert_array_equal(est.predict(flat), est.predict(boxes))


@pytest.mark.parametrize("bad", [np.zeros((3, 2, 3)), np.array([[[1.0, 0.0], [0.0, 1.0]]]),
                                 np.full((1, 2, 2), np.nan), "boxes"])
def test_rejects_bad_boxes(e1_net, bad):
    with pytest.raises((SpecificationError, ValueError)):
        CBFVerifier(e1_net, "double_integrator_1d").fit(bad)


def test_unfitted(e1_net):
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        CBFVerifier(e1_net, "double_integrator_1d").predict(np.zeros((1, 2, 2)))


def test_unknown_dynamics(e1_net):
    with pytest.raises(SchemaError):
        CBFVerifier(e1_net, "unicycle").fit(np.zeros((1, 2, 2)))


def test_falsifier_estimator(e1_net):
    boxes = BoundaryExtractor(e1_net, grids_per_dim=6).fit_transform(DOMAIN)
    ver = CBFVerifier(e1_net, "double_integrator_1d", max_splits=20).fit(boxes)
    fal = Falsifier(e1_net, "double_integrator_1d", budget=128, seed=0).fit(boxes)
    assert fal.score(boxes) >= ver.score(boxes)


def test_empty_boundary(e1_net):
    from cbfverify import ReluMlp
    net = ReluMlp([[[0.0, 0.0]]], [[1.0]])
    ext = BoundaryExtractor(net, grids_per_dim=4).fit(DOMAIN)
    assert ext.n_boxes_ == 0
    est = CBFVerifier(net, "double_integrator_1d").fit(ext.transform(DOMAIN))
    assert est.verified_rate_ == 1.0
