import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from gpgraph.errors import AlignmentError, DimensionError
from gpgraph.estimator import GPGraph, window_seed
from gpgraph.partition import GroupPartition
from gpgraph.synth import SynthSpec, corpus
from gpgraph.trajectories import TrajectoryWindow, make_windows, window_labels


@pytest.fixture(scope="module")
def data():
    windows, labels = [], []
    for scene, groups in corpus(SynthSpec(noise=0.01, seed=60), 3, group_range=(2, 3)):
        w = make_windows(scene)[0]
        windows.append(w)
        labels.append(window_labels(groups, w))
    return windows, labels


def test_params_round_trip():
    est = GPGraph(hidden=8, epochs=3, mode="scene")
    params = est.get_params()
    assert params["hidden"] == 8 and params["mode"] == "scene"
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(lr=0.01)
    assert est.lr == 0.01


def test_not_fitted(data):
    with pytest.raises(NotFittedError):
        GPGraph().predict(data[0])


def test_fit_predict_sample(data):
    windows, labels = data
    est = GPGraph(epochs=2, group_loss_weight=1.0).fit(windows, labels)
    assert len(est.loss_trace_) == 2 and est.n_steps_ == 2 * len(windows)
    paths = est.predict(windows)
    assert [p.shape for p in paths] == [(w.n, 12, 2) for w in windows]
    samples = est.sample(windows, count=5)
    assert samples[0].shape == (5, windows[0].n, 12, 2)
    again = est.sample(windows, count=5)
    assert all(np.array_equal(a, b) for a, b in zip(samples, again))
    groups = est.predict_groups(windows)
    assert all(isinstance(g, GroupPartition) and g.n == w.n for g, w in zip(groups, windows))
    assert est.score(windows) <= 0.0


def test_sample_offset_matches_position(data):
    windows, _ = data
    est = GPGraph(epochs=1).fit(windows)
    full = est.sample(windows)
    single = est.sample([windows[2]], offset=2)
    np.testing.assert_array_equal(full[2], single[0])
    assert window_seed(0, 2) != window_seed(0, 3)


def test_inference_ignores_future(data):
    windows, _ = data
    est = GPGraph(epochs=1).fit(windows)
    w = windows[0]
    blind = TrajectoryWindow(w.ped_ids, w.obs, w.fut * 0 + 1e6)
    np.testing.assert_array_equal(est.predict([w])[0], est.predict([blind])[0])


def test_input_validation(data):
    windows, labels = data
    with pytest.raises(ValueError):
        GPGraph(epochs=1).fit([])
    bad = TrajectoryWindow([1], np.zeros((1, 5, 2)), np.zeros((1, 12, 2)))
    with pytest.raises(DimensionError):
        GPGraph(epochs=1).fit([bad])
    nan = TrajectoryWindow([1], np.full((1, 8, 2), np.nan), np.zeros((1, 12, 2)))
    with pytest.raises(ValueError):
        GPGraph(epochs=1).fit([nan])
    with pytest.raises(AlignmentError):
        GPGraph(epochs=1, group_loss_weight=1.0).fit(windows, labels[:1])
    with pytest.raises(ValueError):
        GPGraph(epochs=1, mode="crowd").fit(windows)
