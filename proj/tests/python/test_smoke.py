import json
import math

import numpy as np
import pytest

import gsteg


def small_instance():
    return gsteg.generate_dataset(2, 2, [3, 3], num_instances=4, seed=3)[0]


def test_generate_dataset_is_deterministic():
    a = gsteg.generate_dataset(2, 2, [3, 3], num_instances=5, seed=9)
    b = gsteg.generate_dataset(2, 2, [3, 3], num_instances=5, seed=9)
    assert a == b
    assert len(a[0]["features"]) == 2
    assert len(a[0]["features"][0][0]) == 3 + 2


def test_marginals_are_distributions():
    inst = gsteg.instance_json(small_instance())
    model = gsteg.Model(2, 2, [3, 3], [5, 5], mode="gsteg", rank=2, seed=1)
    q = model.marginals(inst, passes=3)
    assert len(q) == 4
    for node in q:
        assert np.all(node > 0)
        assert math.isclose(float(np.sum(node)), 1.0, abs_tol=1e-12)
    labels = model.map_labels(inst)
    assert [len(row) for row in labels] == [2, 2]


def test_unary_model_matches_exact_marginals():
    inst = gsteg.instance_json(small_instance())
    model = gsteg.Model(2, 2, [3, 3], [5, 5], mode="ueg", seed=4)
    for mf, ex in zip(model.marginals(inst), model.exact_marginals(inst)):
        np.testing.assert_allclose(mf, ex, atol=1e-12)


def test_json_round_trip_and_gradients():
    inst = gsteg.instance_json(small_instance())
    model = gsteg.Model(2, 2, [3, 3], [5, 5], mode="steg", seed=2)
    back = gsteg.Model.from_json(model.to_json())
    assert back.parameter_names() == model.parameter_names()
    assert back.loss(inst) == model.loss(inst)
    assert model.finite_diff_check(inst) < 1e-4


def test_metrics():
    assert gsteg.average_precision([True, False, True], 2) == pytest.approx(5 / 6, abs=1e-15)
    box = [0.0, 0.0, 10.0, 10.0]
    assert gsteg.viou(0, [box, box], 1, [box, box]) == pytest.approx(1 / 3)
    acc = gsteg.recognition_accuracy([[0, 1, 2], [1, 1, 1]], [[0, 1, 2], [1, 0, 1]])
    assert acc["relationship"] == 0.5
    assert acc["subject"] == 1.0


def test_errors_and_cli():
    with pytest.raises(gsteg.GstegError):
        gsteg.Model(1, 1, [3], [2], mode="gsteg", rank=3)
    code, out, _ = gsteg.run_cli(["verify", "metrics", "--cases", "5"])
    assert code == 0
    assert "PASS" in out
    assert gsteg.run_cli(["nonsense"])[0] == 1
    assert all(r["passed"] for r in gsteg.verify("freeenergy", seed=3))
