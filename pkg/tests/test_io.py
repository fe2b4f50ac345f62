import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ensemblepool import io
from ensemblepool.core import AlignmentError, LabelVector, NormalizationError, PredictionMatrix
from ensemblepool.sampling import KFoldSpec, kfold_split, percentage_split


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_predictions_round_trip_10_digits(tmp_path):
    rng = np.random.default_rng(0)
    m = PredictionMatrix([f"id{i}" for i in range(30)], rng.dirichlet(np.ones(4), size=30))
    io.write_predictions(tmp_path / "a.csv", m, ["w", "x", "y", "z"])
    first, names = io.read_predictions(tmp_path / "a.csv")
    assert names == ["w", "x", "y", "z"]
    assert first.sample_ids == m.sample_ids
    io.write_predictions(tmp_path / "b.csv", first, names)
    second, _ = io.read_predictions(tmp_path / "b.csv")
    np.testing.assert_array_equal(first.values, second.values)
    assert (tmp_path / "a.csv").read_text() == (tmp_path / "b.csv").read_text()
    np.testing.assert_allclose(first.values, m.values, rtol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 6), st.integers(1, 15), st.integers(0, 10**6))
def test_predictions_round_trip_property(c, n, seed):
    import tempfile
    from pathlib import Path
    rng = np.random.default_rng(seed)
    m = PredictionMatrix([str(i) for i in range(n)], rng.dirichlet(np.ones(c), size=n))
    with tempfile.TemporaryDirectory() as d:
        first_text = io.format_predictions(m)
        Path(d, "p.csv").write_text(first_text)
        parsed, names = io.read_predictions(Path(d, "p.csv"))
        assert io.format_predictions(parsed, names) == io.format_predictions(
            io.read_predictions(Path(d, "p.csv"))[0], names)


def test_predictions_within_ingest_tolerance_renormalized(tmp_path):
    p = write(tmp_path / "p.csv", "sample_id,a,b\nx,0.5004,0.5\n")
    m, _ = io.read_predictions(p)
    assert m.values.sum() == pytest.approx(1.0, abs=1e-15)


def test_predictions_outside_tolerance_rejected_with_line(tmp_path):
    p = write(tmp_path / "p.csv", "sample_id,a,b\nx,0.5,0.5\ny,0.6,0.6\n")
    with pytest.raises(NormalizationError, match=":3"):
        io.read_predictions(p)


def test_predictions_degenerate_detection(tmp_path):
    p = write(tmp_path / "p.csv", "sample_id,a,b\nx,0,0.7\ny,0.9,0\n")
    m, _ = io.read_predictions(p)
    assert m.degenerate
    np.testing.assert_array_equal(m.values, [[0, 0.7], [0.9, 0]])


@pytest.mark.parametrize("text, line", [
    ("sample_id,a,b\nx,0.5\n", ":2"),
    ("sample_id,a,b\nx,0.5,0.5\ny,abc,0.5\n", ":3"),
    ("id,a,b\nx,0.5,0.5\n", ":1"),
])
def test_predictions_parse_errors(tmp_path, text, line):
    with pytest.raises(io.ParseError, match=line):
        io.read_predictions(write(tmp_path / "p.csv", text))


def test_labels_round_trip(tmp_path):
    labels = LabelVector(["a", "b", "c"], [2, 0, 1], 3)
    io.write_labels(tmp_path / "l.csv", labels)
    back = io.read_labels(tmp_path / "l.csv", 3)
    assert back.sample_ids == labels.sample_ids
    np.testing.assert_array_equal(back.labels, labels.labels)


@pytest.mark.parametrize("text, line", [
    ("sample_id,label\na,0\nb,x\n", ":3"),
    ("sample_id,label\na,0,1\n", ":2"),
    ("sample_id,lbl\na,0\n", ":1"),
    ("sample_id,label\na,-1\n", ":2"),
])
def test_labels_parse_errors(tmp_path, text, line):
    with pytest.raises(io.ParseError, match=line):
        io.read_labels(write(tmp_path / "l.csv", text))


def test_manifest_round_trip_and_alignment(tmp_path):
    ids = ["x", "y"]
    io.write_predictions(tmp_path / "m0.csv", PredictionMatrix(ids, [[0.6, 0.4], [0.1, 0.9]]))
    io.write_predictions(tmp_path / "m1.csv", PredictionMatrix(ids, [[0.8, 0.2], [0.3, 0.7]]))
    io.write_labels(tmp_path / "labels.csv", LabelVector(ids, [0, 1]))
    io.write_manifest(tmp_path / "bundle.json", ["m0.csv", "m1.csv"], labels_path="labels.csv")
    bundle, labels, names = io.read_manifest(tmp_path / "bundle.json")
    assert bundle.member_count == 2 and names == ["class_0", "class_1"]
    np.testing.assert_array_equal(labels.labels, [0, 1])

    io.write_predictions(tmp_path / "m1.csv", PredictionMatrix(["y", "x"], [[0.8, 0.2], [0.3, 0.7]]))
    with pytest.raises(AlignmentError):
        io.read_manifest(tmp_path / "bundle.json")


def test_manifest_missing_member(tmp_path):
    io.write_manifest(tmp_path / "bundle.json", ["nope.csv"])
    with pytest.raises(io.ParseError, match="does not exist"):
        io.read_manifest(tmp_path / "bundle.json")


def test_split_documents_round_trip(tmp_path):
    labels = LabelVector([f"s{i}" for i in range(60)], np.repeat([0, 1], 30))
    base = percentage_split(labels, seed=1)
    folds = kfold_split(labels, base, KFoldSpec(3, 1))
    io.write_json(tmp_path / "s.json", io.kfold_to_dict(base, folds, seed=1))
    base_back, folds_back = io.read_split(tmp_path / "s.json")
    assert base_back == base
    assert list(folds_back) == list(folds)
    io.write_json(tmp_path / "p.json", io.split_to_dict(base, seed=1))
    assert io.read_split(tmp_path / "p.json")[0] == base


def test_json_is_sorted_and_rejects_nan():
    assert io.dumps_json({"b": 1, "a": 2}).index('"a"') < io.dumps_json({"b": 1, "a": 2}).index('"b"')
    with pytest.raises(ValueError):
        io.dumps_json({"x": float("nan")})


def test_invalid_json_names_line(tmp_path):
    with pytest.raises(io.ParseError, match=":2"):
        io.read_json(write(tmp_path / "x.json", '{\n  "a": ,\n}'))
