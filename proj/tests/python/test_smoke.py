import math

import numpy as np
import pytest

import mvdp


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("mvdp")
    train = mvdp.generate_dataset("easy", "train", 40, 2, str(d), seed=1, size=48)
    test = mvdp.generate_dataset("easy", "test", 6, 2, str(d), seed=2, size=48, sequence_length=3)
    return train, test


def test_geometry_round_trip():
    k = mvdp.CameraIntrinsics.from_fov(64, 64, 1.2)
    pose = mvdp.look_at(np.array([0.5, -0.2, -2.0]), np.zeros(3))
    p = mvdp.backproject(np.array([10.0, 40.0]), 2.5, k, pose)
    pixel, depth = mvdp.project(p, k, pose)
    assert np.allclose(pixel, [10.0, 40.0], atol=1e-9)
    assert math.isclose(depth, 2.5, abs_tol=1e-12)


def test_eigenvalues_descending():
    a = np.random.default_rng(0).normal(size=(3, 3))
    m = a @ a.T
    got = mvdp.sym_eigenvalues(m)
    assert np.allclose(got, np.sort(np.linalg.eigvalsh(m))[::-1], atol=1e-9)


def test_dataset_and_oracle_features(data):
    train, _ = data
    reader = mvdp.DatasetReader(train)
    assert len(reader) == 40
    s = reader.read(0)
    assert s["joints"].shape == (21, 3)
    oracle = mvdp.OracleClassifier()
    probs = [oracle.classify(v["depth"], v["labels"]) for v in s["views"]]
    assert probs[0].shape == (48, 48, 44)
    assert np.array_equal(probs[0].argmax(axis=2), s["views"][0]["labels"])
    pos, labels, cams = mvdp.fuse(
        probs,
        [v["depth"] for v in s["views"]],
        [v["intrinsics"] for v in s["views"]],
        [v["camera_to_world"] for v in s["views"]],
    )
    assert pos.shape[0] == labels.shape[0] > 0
    f, present = mvdp.extract_features(pos, labels)
    assert f.shape == (1032,)
    assert len(present) == 43
    assert mvdp.feature_name(0) == "c001.median_x"


def test_ridge_identity():
    y = np.arange(12.0).reshape(4, 3)
    w = mvdp.fit_ridge(np.eye(4), y, 0.5, free_bias=False)
    assert np.allclose(w, y / 1.5)


def test_errors_raise():
    with pytest.raises(mvdp.Error):
        mvdp.preprocess(np.full((16, 16), 255, dtype=np.uint8), 32)


def test_metrics():
    truth = [np.zeros((2, 3))]
    pred = [np.array([[0.03, 0.04, 0.0], [0.0, 0.0, 0.0]])]
    overall, mean, _ = mvdp.mean_joint_error(pred, truth)
    assert math.isclose(mean[0], 0.05)
    assert math.isclose(overall, 0.025)
    assert mvdp.precision_at(pred, truth, [0.01, 0.10]) == [0.5, 1.0]


def test_pipeline(data, tmp_path):
    train, test = data
    oracle = mvdp.OracleClassifier()
    model, lam, cv_error = mvdp.fit_pipeline_regressor([train], oracle, folds=4)
    assert lam > 0 and cv_error > 0
    path = str(tmp_path / "reg.mvdm")
    mvdp.save_regressor(path, model)
    back = mvdp.load_regressor(path)
    assert np.array_equal(back.weights, model.weights)
    report = mvdp.run_experiment(test, oracle, back)
    assert report["frames"] == 6
    assert math.isfinite(report["mean_error"])
    assert set(report["stage_ms"]) >= {"classify", "fuse", "features", "predict", "smooth"}
