import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import Pipeline
from sklearn.preprocessing import FunctionTransformer

from ptyroi.clustering import KMeans2, RoiSelector
from ptyroi.recon import EPIEReconstructor
from ptyroi.stats import DiffractionStats


@pytest.mark.parametrize(
    "est",
    [DiffractionStats(chunk_size=5), KMeans2(max_iter=4, init="minmax"), RoiSelector(border=-1, log_first=False),
     EPIEReconstructor(n_iter=7)],
)
def test_params_round_trip(est):
    params = est.get_params()
    twin = clone(est)
    assert twin.get_params() == params
    assert twin is not est
    twin.set_params(**params)
    assert repr(twin) == repr(est)


def test_unfitted_estimators_raise():
    with pytest.raises(NotFittedError):
        DiffractionStats().transform(np.ones((2, 3, 3)))
    with pytest.raises(NotFittedError):
        KMeans2().predict([1.0])
    with pytest.raises(NotFittedError):
        RoiSelector().summary()
    with pytest.raises(NotFittedError):
        EPIEReconstructor().transform()


def test_kmeans_estimator_attributes():
    est = KMeans2().fit(np.array([[1.0], [2.0], [9.0], [10.0]]))
    assert est.labels_.tolist() == [0, 0, 1, 1]
    assert est.cluster_centers_.shape == (2, 1)
    assert est.cluster_centers_[:, 0].tolist() == [1.5, 9.5]
    assert est.inertia_ == pytest.approx(1.0)
    assert est.predict([0.0, 20.0]).tolist() == [0, 1]
    assert est.fit_predict([[1.0], [2.0], [9.0], [10.0]]).tolist() == [0, 0, 1, 1]


def test_pipeline_stats_into_kmeans(reference_scan, reference_stats):
    pipe = Pipeline([
        ("stats", DiffractionStats()),
        ("magnitude", FunctionTransformer(lambda X: X[:, 1:])),
        ("kmeans", KMeans2()),
    ])
    labels = pipe.fit_predict(reference_scan.ds.patterns)
    assert labels.shape == (reference_scan.ds.n_frames,)
    assert set(np.unique(labels)) == {0, 1}
    # high-magnitude cluster is the minority at object edges
    assert 0 < labels.mean() < 0.5


def test_pipeline_stats_into_selector(reference_scan, reference_selection):
    ds = reference_scan.ds
    pipe = Pipeline([("stats", DiffractionStats()), ("roi", RoiSelector())])
    selected = pipe.fit_predict(ds.patterns, roi__positions=ds, roi__grid_shape=ds.grid_shape)
    assert np.array_equal(selected, reference_selection.selected_)


def test_selector_needs_positions(reference_stats):
    with pytest.raises(ValueError):
        RoiSelector().fit(reference_stats.X)
