"""Ingestion, synthetic generation, splitting, and the preprocessing
transforms: frozen hand cases plus the structural properties."""

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dysurv.data import (
    FeatureSchema,
    SubjectRecord,
    SurvivalDataset,
    TimeGrid,
    apply_quantile_transform,
    build_time_grid,
    discretize,
    fill_missing,
    fit_quantile_transform,
    generate_synthetic,
    load_csv,
    replicate_static,
    save_dataset_csv,
    split_dataset,
)
from dysurv.errors import DomainError, ParseError, ReferentialError, SchemaError


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def make_manifest(tmp_path, static, series=None, categorical=()):
    write(tmp_path / "static.csv", static)
    manifest = {
        "static_csv": "static.csv",
        "duration_col": "duration",
        "event_col": "event",
        "categorical_cols": list(categorical),
    }
    if series is not None:
        write(tmp_path / "series.csv", series)
        manifest.update(
            series_csv="series.csv", time_col="t", feature_col="feat", value_col="val"
        )
    path = tmp_path / "manifest.json"
    write(path, json.dumps(manifest))
    return path


STATIC = """id,age,sex,duration,event
a,61.0,f,3.5,1
b,48.0,m,7.0,0
c,55.0,f,1.2,1
"""

SERIES = """id,t,feat,val
a,0.0,hr,80
a,1.0,hr,85
a,1.0,sbp,120
b,0.5,sbp,
b,2.0,hr,70
"""


def test_load_csv_one_hot_and_series_pivot(tmp_path):
    ds = load_csv(make_manifest(tmp_path, STATIC, SERIES, categorical=["sex"]))
    assert len(ds) == 3
    assert ds.schema.numeric_static == ["age"]
    assert ds.schema.categorical_static == {"sex": ["f", "m"]}
    assert ds.schema.static_columns() == ["age", "sex=f", "sex=m"]
    assert ds.schema.time_varying == ["hr", "sbp"]
    a = ds.records[0]
    assert np.array_equal(a.static_features, [61.0, 1.0, 0.0])
    assert a.series.shape == (2, 2)
    assert a.series_mask.tolist() == [[True, False], [True, True]]
    assert a.series[1, 1] == 120.0
    assert np.array_equal(a.series_times, [0.0, 1.0])
    # an empty value cell is dropped, so it creates no time step
    b = ds.records[1]
    assert np.array_equal(b.series_times, [2.0])
    assert b.series_mask.tolist() == [[True, False]]
    # subject c has no series rows: a single all-missing step
    c = ds.records[2]
    assert c.series.shape == (1, 2)
    assert not c.series_mask.any()


def test_load_csv_error_contracts(tmp_path):
    with pytest.raises(SchemaError):
        load_csv(make_manifest(tmp_path, "id,age,duration\na,1,2\n"))
    with pytest.raises(SchemaError):
        load_csv(make_manifest(tmp_path, "id,age,duration,event\na,1,2,1\na,1,2,1\n"))
    with pytest.raises(ParseError):
        load_csv(make_manifest(tmp_path, "id,age,duration,event\na,1,soon,1\n"))
    with pytest.raises(ParseError):
        load_csv(make_manifest(tmp_path, "id,age,duration,event\na,1,nan,1\n"))
    with pytest.raises(SchemaError):
        load_csv(make_manifest(tmp_path, "id,age,duration,event\na,1,2,2\n"))
    with pytest.raises(SchemaError):
        load_csv(make_manifest(tmp_path, "id,age,duration,event\na,1,-2,1\n"))
    with pytest.raises(ReferentialError):
        load_csv(make_manifest(
            tmp_path,
            "id,age,duration,event\na,1,2,1\n",
            "id,t,feat,val\nghost,0,hr,80\n",
        ))
    with pytest.raises(SchemaError):
        load_csv(make_manifest(
            tmp_path,
            "id,age,duration,event\na,1,2,1\n",
            "id,t,feat,val\na,0,hr,80\na,0,hr,81\n",
        ))
    with pytest.raises(ParseError):
        make = make_manifest(tmp_path, "id,age,duration,event\na,1,2\n")
        load_csv(make)


def test_csv_round_trip_preserves_everything(tmp_path):
    ds = load_csv(make_manifest(tmp_path, STATIC, SERIES, categorical=["sex"]))
    manifest = save_dataset_csv(ds, tmp_path / "out", stem="rt")
    back = load_csv(manifest)
    assert len(back) == len(ds)
    # categoricals were saved one-hot expanded, so columns match by name
    assert back.schema.static_columns() == ds.schema.static_columns()
    assert back.schema.time_varying == ds.schema.time_varying
    for r1, r2 in zip(ds.records, back.records):
        assert r1.id == r2.id
        assert np.array_equal(r1.static_features, r2.static_features)
        assert r1.duration == r2.duration and r1.event == r2.event
        obs1 = r1.series[r1.series_mask]
        obs2 = r2.series[r2.series_mask]
        assert np.array_equal(np.sort(obs1), np.sort(obs2))


def test_synthetic_censoring_fraction_and_determinism():
    ds = generate_synthetic(10_000, 5, 0.37, seed=7)
    frac = 1.0 - ds.events().mean()
    assert 0.34 <= frac <= 0.40
    again = generate_synthetic(10_000, 5, 0.37, seed=7)
    assert np.array_equal(ds.durations(), again.durations())
    assert np.array_equal(ds.events(), again.events())
    assert np.array_equal(
        np.stack([r.static_features for r in ds.records]),
        np.stack([r.static_features for r in again.records]),
    )
    with pytest.raises(DomainError):
        generate_synthetic(100, 3, 1.2, seed=0)


def test_synthetic_truth_cif_matches_brute_force_oracle():
    ds = generate_synthetic(500, 4, 0.3, seed=11)
    truth = ds.truth
    x = np.stack([r.static_features for r in ds.records])
    # independent evaluation of the ground-truth model, one subject at a time
    for i in range(0, 500, 97):
        hazard = 1.0 / (1.0 + np.exp(-(truth.bin_logits + x[i] @ truth.weights)))
        alive = 1.0
        cif = []
        acc = 0.0
        for k in range(truth.n_bins):
            acc += alive * hazard[k]
            alive *= 1.0 - hazard[k]
            cif.append(acc)
        assert np.array_equal(truth.cif()[i], np.array(cif)) or np.allclose(
            truth.cif()[i], cif, rtol=0, atol=1e-15
        )


def test_split_sizes_exact_and_deterministic():
    ds = generate_synthetic(100, 3, 0.3, seed=1)
    train, val, test = split_dataset(ds, seed=5)
    assert (len(train), len(val), len(test)) == (60, 20, 20)
    train2, _, _ = split_dataset(ds, seed=5)
    assert [r.id for r in train.records] == [r.id for r in train2.records]
    with pytest.raises(DomainError):
        split_dataset(SurvivalDataset(ds.schema, ds.records[:3]), seed=0)


@given(st.integers(0, 1000))
def test_split_partitions_and_stratifies(seed):
    ds = generate_synthetic(200, 3, 0.3, seed=9)
    train, val, test = split_dataset(ds, seed=seed)
    ids = [r.id for part in (train, val, test) for r in part.records]
    assert sorted(ids) == sorted(r.id for r in ds.records)
    base_rate = ds.events().mean()
    for part in (train, val, test):
        assert abs(part.events().mean() - base_rate) <= 0.05


def test_quantile_transform_moments_and_clipping():
    ds = generate_synthetic(2000, 3, 0.3, seed=2)
    train, _, _ = split_dataset(ds, seed=0)
    qt = fit_quantile_transform(train)
    transformed = apply_quantile_transform(qt, train)
    x = np.stack([r.static_features for r in transformed.records])
    assert np.all(np.abs(x.mean(axis=0)) < 0.1)
    # values beyond the fitted range clip to the extreme reference quantile
    lo = min(r.static_features[0] for r in train.records)
    probe = SurvivalDataset(ds.schema, [
        SubjectRecord("p", [lo - 100.0, 0.0, 0.0], np.zeros((1, 0)),
                      np.zeros((1, 0), dtype=bool), 1.0, 1),
        SubjectRecord("q", [lo, 0.0, 0.0], np.zeros((1, 0)),
                      np.zeros((1, 0), dtype=bool), 1.0, 1),
    ])
    out = apply_quantile_transform(qt, probe)
    assert out.records[0].static_features[0] == out.records[1].static_features[0]


@given(st.integers(0, 500))
def test_quantile_transform_is_monotone(seed):
    rng = np.random.default_rng(seed)
    values = np.sort(rng.standard_normal(50) * 3.0)
    schema = FeatureSchema(["x"], {}, [], "duration", "event")
    records = [
        SubjectRecord(f"s{i}", [v], np.zeros((1, 0)), np.zeros((1, 0), dtype=bool), 1.0, 1)
        for i, v in enumerate(rng.standard_normal(40))
    ]
    qt = fit_quantile_transform(SurvivalDataset(schema, records))
    out = qt.transform_values("x", values)
    assert np.all(np.diff(out) >= 0)


def test_constant_feature_maps_to_zero():
    schema = FeatureSchema(["x"], {}, [], "duration", "event")
    records = [
        SubjectRecord(f"s{i}", [4.2], np.zeros((1, 0)), np.zeros((1, 0), dtype=bool), 1.0, 1)
        for i in range(10)
    ]
    qt = fit_quantile_transform(SurvivalDataset(schema, records))
    assert np.array_equal(qt.transform_values("x", np.array([4.2, -3.0, 99.0])), np.zeros(3))


def record_with_series(series, mask, times=None):
    series = np.asarray(series, dtype=np.float64)
    return SubjectRecord(
        "r", [0.0], series, np.asarray(mask, dtype=bool), 5.0, 1,
        series_times=times,
    )


def test_fill_missing_hand_cases():
    r = record_with_series([[0.0], [5.0], [0.0], [7.0]],
                           [[False], [True], [False], [True]])
    filled = fill_missing(r)
    assert filled.series[:, 0].tolist() == [5.0, 5.0, 5.0, 7.0]
    assert filled.series_mask.all()

    r = record_with_series([[3.0], [0.0], [0.0], [0.0]],
                           [[True], [False], [False], [False]])
    assert fill_missing(r).series[:, 0].tolist() == [3.0, 3.0, 3.0, 3.0]

    r = record_with_series([[9.0], [9.0]], [[False], [False]])
    assert fill_missing(r).series[:, 0].tolist() == [0.0, 0.0]


@given(st.integers(0, 500))
def test_fill_missing_idempotent_and_preserves_observed(seed):
    rng = np.random.default_rng(seed)
    series = rng.standard_normal((6, 3))
    mask = rng.random((6, 3)) < 0.5
    r = record_with_series(series, mask)
    once = fill_missing(r)
    twice = fill_missing(once)
    assert np.array_equal(once.series, twice.series)
    assert np.array_equal(once.series[mask], series[mask])


def test_replicate_static_layout():
    r = SubjectRecord(
        "r", [1.0, 2.0], [[10.0], [20.0], [30.0]],
        np.ones((3, 1), dtype=bool), 5.0, 1,
    )
    out = replicate_static(r)
    assert out.shape == (3, 3)
    assert np.array_equal(out[:, :2], np.tile([1.0, 2.0], (3, 1)))
    assert np.array_equal(out[:, 2], [10.0, 20.0, 30.0])
    single = replicate_static(SubjectRecord(
        "s", [1.0], np.zeros((1, 0)), np.zeros((1, 0), dtype=bool), 1.0, 0))
    assert single.shape == (1, 1)


def test_time_grid_and_discretize_contracts():
    grid = build_time_grid([2.0, 10.0, 7.0], n_bins=10)
    assert grid.t_max == 10.0
    assert np.allclose(grid.boundaries, np.linspace(0, 10, 11))
    assert discretize(grid, 0.0) == 0
    assert discretize(grid, 9.99) == 9
    assert discretize(grid, 10.0) == 9
    assert discretize(grid, 12.0) == 9
    with pytest.raises(DomainError):
        discretize(grid, -0.1)
    with pytest.raises(DomainError):
        build_time_grid([1.0], n_bins=1)
    with pytest.raises(DomainError):
        build_time_grid([], n_bins=10)


@given(st.lists(st.floats(0.0, 100.0), min_size=2, max_size=30))
def test_discretize_nondecreasing_and_in_range(durations):
    grid = build_time_grid(np.maximum(durations, 1e-6), n_bins=10)
    bins = discretize(grid, np.sort(np.asarray(durations)))
    assert np.all(np.diff(bins) >= 0)
    assert bins.min() >= 0 and bins.max() <= 9


def test_discretize_surjective_when_durations_span_grid():
    grid = TimeGrid(n_bins=10, t_max=10.0)
    bins = discretize(grid, np.linspace(0.0, 10.0, 200))
    assert set(bins.tolist()) == set(range(10))


def test_last_observed_time():
    r = record_with_series([[1.0], [2.0], [3.0]],
                           [[True], [True], [False]], times=np.array([0.0, 4.0, 9.0]))
    assert r.last_observed_time() == 4.0
    r2 = record_with_series([[1.0]], [[False]], times=np.array([0.0]))
    assert r2.last_observed_time() is None
