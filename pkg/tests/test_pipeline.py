import json
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dalperf.data import apply_scaler, fit_scaler, planted_cluster, split_train_test, synth_landscape
from dalperf.local import LocalModelSpec, train_local
from dalperf.pipeline import (
    ArchiveError,
    DalConfig,
    dal_predict,
    dal_predict_many,
    dal_train,
    load_model,
    model_from_dict,
    model_to_dict,
    phase_report,
    save_model,
)
from dalperf.rdnn import TrainingError

from conftest import FAST_RDNN

LR = LocalModelSpec("lr")
FAST = LocalModelSpec("rdnn", overrides=FAST_RDNN)


def test_depth_zero_is_single_global_model():
    ds = synth_landscape(2, 20, 4, 100, 1, 0)
    model = dal_train(ds, DalConfig(depth=0, local=LR))
    assert len(model.divisions) == 1 and model.router is None
    assert list(model.local_models) == [0]
    assert model.divisions[0].size == len(ds)


def test_vp8_two_divisions(vp8):
    model = dal_train(vp8, DalConfig(depth=1, local=LR))
    assert sorted(d.size for d in model.divisions) == [8, 10]
    assert len(model.local_models) == 2 and model.router is not None


def test_four_clusters_divisions_match_labels():
    ds = synth_landscape(4, 50, 6, 100, 1, 0)
    model = dal_train(ds, DalConfig(depth=2, local=LR))
    labels = planted_cluster(ds.X, 4)
    got = sorted(tuple(d.sample_indices.tolist()) for d in model.divisions)
    want = sorted(tuple(np.nonzero(labels == c)[0].tolist()) for c in range(4))
    assert got == want


def test_reduction_property_lr_matches_direct_fit():
    ds = synth_landscape(2, 20, 4, 100, 1, 3)
    model = dal_train(ds, DalConfig(depth=0, local=LR, seed=5))
    q = np.random.default_rng(0).uniform(size=(20, 4))
    q[:, 0] = np.round(q[:, 0])
    scaler = fit_scaler(ds)
    scaled = apply_scaler(scaler, ds)
    direct = train_local(scaled.X, scaled.y, LR, 5)
    want = scaler.inverse_y(direct.predict(scaler.transform_x(q)))
    assert np.array_equal(dal_predict_many(model, q)[1], want)


def test_prediction_lands_in_cluster_range():
    ds = synth_landscape(2, 30, 4, 100, 1, 1)
    model = dal_train(ds, DalConfig(depth=1, local=LR))
    labels = planted_cluster(ds.X, 2)
    hi = ds.y[labels == 1]
    rec = dal_predict(model, [1, 0.5, 0.5, 0.5])
    assert hi.min() - 1 <= rec.performance <= hi.max() + 1
    assert rec.division == 1


def test_routing_accuracy_four_clusters():
    accs = []
    for seed in range(10):
        ds = synth_landscape(4, 50, 6, 100, 1, seed)
        train, test = split_train_test(ds, 80, seed)
        model = dal_train(train, DalConfig(depth=2, local=LR, seed=seed))
        train_labels = planted_cluster(train.X, 4)
        owner = {d.division_id: np.bincount(train_labels[d.sample_indices]).argmax() for d in model.divisions}
        assigned, _ = dal_predict_many(model, test.X)
        routed = np.array([owner[int(a)] for a in assigned])
        accs.append(np.mean(routed == planted_cluster(test.X, 4)))
    assert np.mean(accs) >= 0.95


def test_repeated_query_identical():
    ds = synth_landscape(2, 20, 4, 100, 1, 0)
    model = dal_train(ds, DalConfig(depth=1, local=LocalModelSpec("knn")))
    a = dal_predict(model, ds.X[3])
    b = dal_predict(model, ds.X[3])
    assert a == b and np.isfinite(a.performance)


def test_too_few_rows_for_depth():
    ds = synth_landscape(2, 3, 3, 100, 1, 0)
    with pytest.raises(TrainingError, match="depth 0"):
        dal_train(ds, DalConfig(depth=1, local=LR))


def test_schema_mismatch():
    ds = synth_landscape(2, 10, 3, 100, 1, 0)
    model = dal_train(ds, DalConfig(depth=1, local=LR))
    with pytest.raises(ValueError, match="expects 3"):
        dal_predict(model, [0, 1])


def test_negative_depth_config():
    with pytest.raises(ValueError):
        DalConfig(depth=-1)


def test_concurrent_training_matches_sequential():
    ds = synth_landscape(4, 10, 4, 100, 1, 2)
    spec = LocalModelSpec("rf", overrides={"n_trees": 10})
    seq = dal_train(ds, DalConfig(depth=2, local=spec, jobs=1))
    par = dal_train(ds, DalConfig(depth=2, local=spec, jobs=3))
    assert json.dumps(model_to_dict(seq)["local_models"]) == json.dumps(model_to_dict(par)["local_models"])


def test_phase_report():
    ds = synth_landscape(2, 15, 4, 100, 1, 0)
    t0 = time.perf_counter()
    model = dal_train(ds, DalConfig(depth=1, local=FAST))
    dividing, training, predicting = phase_report(model)
    assert predicting == 0.0
    assert dividing >= 0 and dividing <= training
    assert all(training >= t for t in model.timings.local.values())
    dal_predict_many(model, ds.X)
    wall = time.perf_counter() - t0
    assert phase_report(model)[2] > 0
    assert sum(phase_report(model)) <= wall


def test_archive_round_trip(tmp_path):
    ds = synth_landscape(2, 15, 4, 100, 1, 0)
    model = dal_train(ds, DalConfig(depth=1, local=FAST))
    path = tmp_path / "m.json"
    save_model(model, path)
    back = load_model(path)
    q = np.random.default_rng(1).uniform(size=(100, 4))
    q[:, 0] = np.round(q[:, 0])
    assert np.array_equal(dal_predict_many(back, q)[1], dal_predict_many(model, q)[1])
    assert back.tree.same_as(model.tree) and back.router.same_as(model.router)


def test_archive_truncated(tmp_path):
    ds = synth_landscape(2, 10, 3, 100, 1, 0)
    path = tmp_path / "m.json"
    save_model(dal_train(ds, DalConfig(depth=1, local=LR)), path)
    path.write_text(path.read_text()[:200])
    with pytest.raises(ArchiveError, match="malformed"):
        load_model(path)


def test_archive_unknown_version():
    ds = synth_landscape(2, 10, 3, 100, 1, 0)
    doc = model_to_dict(dal_train(ds, DalConfig(depth=1, local=LR)))
    doc["format_version"] = "0"
    with pytest.raises(ArchiveError, match="supported: 1, 2"):
        model_from_dict(doc)


def test_archive_version_1_upgrades():
    ds = synth_landscape(2, 10, 3, 100, 1, 0)
    model = dal_train(ds, DalConfig(depth=1, local=LR))
    doc = model_to_dict(model)
    doc["format_version"] = 1
    del doc["timings"]
    back = model_from_dict(doc)
    assert phase_report(back) == (0.0, 0.0, 0.0)
    assert np.array_equal(dal_predict_many(back, ds.X)[1], dal_predict_many(model, ds.X)[1])


def test_archive_missing_field():
    ds = synth_landscape(2, 10, 3, 100, 1, 0)
    doc = model_to_dict(dal_train(ds, DalConfig(depth=1, local=LR)))
    del doc["scaler"]
    with pytest.raises(ArchiveError):
        model_from_dict(doc)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(0, 3), st.sampled_from(["lr", "cart", "knn"]), st.integers(0, 2**32 - 1))
def test_routing_totality_and_determinism(clusters, depth, kind, seed):
    ds = synth_landscape(clusters, 12, 4, 50, 1, seed)
    cfg = DalConfig(depth=depth, local=LocalModelSpec(kind), seed=seed, router_trees=15)
    model = dal_train(ds, cfg)
    assert set(model.local_models) == {d.division_id for d in model.divisions}
    q = np.random.default_rng(seed).uniform(-0.5, 1.5, size=(25, 4))
    assigned, pred = dal_predict_many(model, q)
    assert np.all(np.isfinite(pred))
    assert set(assigned.tolist()) <= set(model.local_models)
    again = dal_train(ds, cfg)
    doc_a, doc_b = model_to_dict(model), model_to_dict(again)
    doc_a.pop("timings"), doc_b.pop("timings")
    assert json.dumps(doc_a) == json.dumps(doc_b)
