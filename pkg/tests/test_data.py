import logging

import numpy as np
import pytest

from hteforest.data import (
    BINARY,
    CONTINUOUS,
    ORDINAL,
    SURVIVAL,
    Binary,
    CenteredDesign,
    Continuous,
    Dataset,
    Ordinal,
    Sample,
    load_csv,
    split_train_test,
    write_csv,
)
from hteforest.errors import SchemaError, ValidationError

CONT_SCHEMA = {"kind": "continuous", "treatment": "w", "outcome": "y"}


def _write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_load_csv_three_rows(tmp_path):
    path = _write(tmp_path, "y,w,x1\n1.5,0,0.1\n2.5,1,0.2\n3.5,0,0.3\n")
    data = load_csv(path, CONT_SCHEMA)
    assert data.n == 3 and data.p == 1
    assert data.kind == CONTINUOUS
    np.testing.assert_allclose(data.y, [1.5, 2.5, 3.5])
    np.testing.assert_allclose(data.w, [0, 1, 0])


def test_load_csv_single_arm_rejected(tmp_path):
    path = _write(tmp_path, "y,w,x1\n1.0,1,0.1\n2.0,1,0.2\n")
    with pytest.raises(ValidationError, match="single treatment arm"):
        load_csv(path, CONT_SCHEMA)


def test_load_csv_survival_time_zero_rejects_row(tmp_path):
    path = _write(tmp_path, "time,event,w,x1\n1.0,1,0,0.1\n0.0,1,1,0.2\n")
    schema = {"kind": "survival", "treatment": "w", "time": "time", "event": "event"}
    with pytest.raises(ValidationError, match="row 1"):
        load_csv(path, schema)


def test_load_csv_drops_missing_outcomes(tmp_path, caplog):
    path = _write(tmp_path, "y,w,x1\n1.0,0,0.1\nNA,1,0.2\n2.0,1,0.3\n")
    with caplog.at_level(logging.WARNING):
        data = load_csv(path, CONT_SCHEMA)
    assert data.n == 2
    assert "dropped 1 rows" in caplog.text


def test_load_csv_malformed_cell_names_row_and_column(tmp_path):
    path = _write(tmp_path, "y,w,x1\n1.0,0,0.1\n2.0,1,oops\n")
    with pytest.raises(SchemaError, match=r"row 1.*'x1'"):
        load_csv(path, CONT_SCHEMA)


def test_load_csv_missing_covariate_rejected(tmp_path):
    path = _write(tmp_path, "y,w,x1\n1.0,0,\n2.0,1,0.3\n")
    with pytest.raises(ValidationError, match="missing covariate"):
        load_csv(path, CONT_SCHEMA)


def test_csv_round_trip(tmp_path, rng):
    n, p = 40, 3
    x = rng.normal(size=(n, p))
    w = rng.integers(0, 2, n).astype(float)
    w[:2] = [0, 1]
    data = Dataset(x, w, CONTINUOUS, y=rng.normal(size=n))
    path = tmp_path / "out.csv"
    write_csv(data, path)
    back = load_csv(path, CONT_SCHEMA | {"covariates": ["x1", "x2", "x3"]})
    np.testing.assert_array_equal(back.x, data.x)
    np.testing.assert_array_equal(back.w, data.w)
    np.testing.assert_array_equal(back.y, data.y)


def test_csv_round_trip_survival(tmp_path, rng):
    n = 25
    x = rng.normal(size=(n, 2))
    w = rng.integers(0, 2, n).astype(float)
    w[:2] = [0, 1]
    data = Dataset(x, w, SURVIVAL, time=rng.exponential(size=n) + 0.01,
                   event=rng.random(n) < 0.5)
    path = tmp_path / "surv.csv"
    write_csv(data, path)
    schema = {"kind": "survival", "treatment": "w", "time": "time", "event": "event"}
    back = load_csv(path, schema)
    np.testing.assert_array_equal(back.time, data.time)
    np.testing.assert_array_equal(back.event, data.event)


def test_load_csv_ordinal_label_mapping(tmp_path):
    path = _write(tmp_path, "y,w,x1\n2,0,0.1\n4,1,0.2\n8,0,0.3\n2,1,0.4\n")
    schema = {"kind": "ordinal", "treatment": "w", "outcome": "y", "levels": 3}
    data = load_csv(path, schema)
    np.testing.assert_array_equal(data.level, [1, 2, 3, 1])
    path2 = _write(tmp_path, "y,w,x1\n2,0,0.1\n4,1,0.2\n", name="bad.csv")
    with pytest.raises(ValidationError, match="distinct labels"):
        load_csv(path2, schema)


def test_split_sizes_and_determinism(rng):
    x = rng.normal(size=(10, 2))
    w = (np.arange(10) % 2).astype(float)
    data = Dataset(x, w, CONTINUOUS, y=rng.normal(size=10))
    tr1, te1 = split_train_test(data, 4, np.random.default_rng(1))
    tr2, te2 = split_train_test(data, 4, np.random.default_rng(1))
    assert tr1.n == 6 and te1.n == 4
    np.testing.assert_array_equal(tr1.x, tr2.x)
    np.testing.assert_array_equal(te1.y, te2.y)
    # disjoint partition
    seen = np.concatenate([tr1.y, te1.y])
    np.testing.assert_array_equal(np.sort(seen), np.sort(data.y))


def test_split_boundaries(rng):
    x = rng.normal(size=(5, 2))
    data = Dataset(x, np.array([0, 1, 0, 1, 0.0]), CONTINUOUS, y=np.arange(5.0))
    train, test = split_train_test(data, 0, 3)
    assert train.n == 5 and test.n == 0
    with pytest.raises(ValueError):
        split_train_test(data, 5, 3)


def test_dataset_invariants(rng):
    x = rng.normal(size=(4, 2))
    w = np.array([0, 1, 0, 1.0])
    with pytest.raises(ValidationError):
        Dataset(np.array([[np.nan, 1.0]] * 4), w, CONTINUOUS, y=np.zeros(4))
    with pytest.raises(ValidationError):
        Dataset(x, np.array([0, 1, 2, 1.0]), CONTINUOUS, y=np.zeros(4))
    with pytest.raises(ValidationError):
        Dataset(x, w, ORDINAL, level=np.array([0, 1, 2, 3]), n_levels=3)
    with pytest.raises(ValidationError):
        Dataset(x, w, SURVIVAL, time=np.array([1.0, -1.0, 2.0, 3.0]),
                event=np.ones(4, dtype=bool))
    with pytest.raises(ValidationError):
        Dataset(x, w, "interval", lower=np.array([0, 0, 0, 2.0]),
                upper=np.array([1, 1, 1, 1.0]))
    with pytest.raises(ValidationError):
        Dataset(x, w, BINARY, y=np.array([0, 1, 2, 0.0]))


def test_from_samples_rejects_mixed_variants(rng):
    samples = [
        Sample(np.zeros(2), 0, Continuous(1.0)),
        Sample(np.zeros(2), 1, Binary(1)),
    ]
    with pytest.raises(ValidationError, match="share one outcome variant"):
        Dataset.from_samples(samples)


def test_from_samples_ordinal_round_trip():
    samples = [
        Sample(np.array([0.1, 0.2]), 1, Ordinal(2, 4)),
        Sample(np.array([0.3, 0.4]), 0, Ordinal(4, 4)),
    ]
    data = Dataset.from_samples(samples)
    assert data.kind == ORDINAL and data.n_levels == 4
    assert data.sample(1).outcome == Ordinal(4, 4)


def test_dataset_immutable(rng):
    data = Dataset(rng.normal(size=(3, 2)), np.array([0, 1, 0.0]),
                   CONTINUOUS, y=np.zeros(3))
    with pytest.raises(ValueError):
        data.x[0, 0] = 5.0


def test_centered_design_invariants():
    w = np.array([0.0, 1.0, 0.0])
    CenteredDesign.naive(w)
    with pytest.raises(ValidationError):
        CenteredDesign(w, np.ones(3), "naive")
    with pytest.raises(ValidationError):
        CenteredDesign(w - 0.3, np.zeros(3), "naive")
    with pytest.raises(ValidationError):
        CenteredDesign(w - 0.5, np.ones(3), "robinson_w")
    d = CenteredDesign(w - 0.5, np.array([1.0, 2.0, 3.0]), "robinson")
    sub = d.take([0, 2])
    np.testing.assert_allclose(sub.offset, [1.0, 3.0])
