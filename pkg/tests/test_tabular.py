import numpy as np
import pytest

from ens2.tabular import (
    CATEGORICAL,
    NUMERIC,
    UNKNOWN_TOKEN,
    Dataset,
    ParseError,
    PipelineRecord,
    PredictionMatrix,
    Schema,
    TaskSpec,
    align_test,
    align_to,
    category_values,
    dataset_to_csv_bytes,
    parse_csv,
    read_manifest,
    take_rows,
    write_manifest,
)

CSV = b"""age,city,income,label
31,york,50000,yes
25,leeds,,no
40,york,61000,yes
,leeds,42000,no
"""


def test_parse_infers_column_kinds():
    d = parse_csv(CSV, "label")
    kinds = dict(d.schema.columns)
    assert kinds == {"age": NUMERIC, "city": CATEGORICAL, "income": NUMERIC}


def test_parse_encodes_labels_against_sorted_vocab():
    d = parse_csv(CSV, "label")
    assert d.label_vocab == ("no", "yes")
    assert d.labels.tolist() == [1, 0, 1, 0]


def test_parse_missing_cells():
    d = parse_csv(CSV, "label")
    assert np.isnan(d.column("age")[3])
    assert np.isnan(d.column("income")[1])
    assert d.column("city")[0] == "york"


def test_parse_without_target_keeps_all_columns():
    d = parse_csv(CSV, None)
    assert d.labels is None
    assert set(d.schema.names) == {"age", "city", "income", "label"}


def test_parse_rejects_unknown_target():
    with pytest.raises(ParseError, match="target"):
        parse_csv(CSV, "salary")


def test_parse_rejects_missing_header():
    with pytest.raises(ParseError):
        parse_csv(b"", "label")


def test_parse_rejects_ragged_rows():
    with pytest.raises(ParseError, match="row 2"):
        parse_csv(b"a,b\n1,2\n3\n", "b")


def test_parse_rejects_duplicate_columns():
    with pytest.raises(ParseError):
        parse_csv(b"a,a\n1,2\n", None)


def test_parse_rejects_missing_label_cell():
    with pytest.raises(ParseError):
        parse_csv(b"x,y\n1,\n", "y")


def test_numeric_column_must_parse_everywhere():
    """One unparseable non-empty cell makes the whole column categorical."""
    d = parse_csv(b"x,y\n1,a\n2,a\nn/a,b\n", "y")
    assert d.schema.kind_of("x") == CATEGORICAL


def test_inf_and_nan_spellings_are_text():
    d = parse_csv(b"x,y\ninf,a\n1.5,b\n", "y")
    assert d.schema.kind_of("x") == CATEGORICAL


def test_csv_round_trip():
    d = parse_csv(CSV, "label")
    again = parse_csv(dataset_to_csv_bytes(d), "label")
    assert again.schema == d.schema
    assert again.label_vocab == d.label_vocab
    np.testing.assert_array_equal(again.labels, d.labels)
    for a, b in zip(again.cols, d.cols):
        if a.dtype == np.float64:
            np.testing.assert_array_equal(np.isnan(a), np.isnan(b))
            np.testing.assert_allclose(a[~np.isnan(a)], b[~np.isnan(b)])
        else:
            assert a.tolist() == b.tolist()


def test_round_trip_preserves_exact_floats():
    d = parse_csv(b"x,y\n0.1,a\n0.30000000000000004,b\n", "y")
    again = parse_csv(dataset_to_csv_bytes(d), "y")
    np.testing.assert_array_equal(again.column("x"), d.column("x"))


def test_take_rows_keeps_vocab():
    d = parse_csv(CSV, "label")
    sub = take_rows(d, np.array([2, 0]))
    assert sub.n_rows == 2
    assert sub.label_vocab == d.label_vocab
    assert sub.labels.tolist() == [1, 1]
    assert sub.column("city").tolist() == ["york", "york"]


class TestSchema:
    def test_duplicate_names_rejected(self):
        with pytest.raises(ValueError):
            Schema(columns=(("a", NUMERIC), ("a", NUMERIC)), target="a")

    def test_bad_kind_rejected(self):
        with pytest.raises(ValueError):
            Schema(columns=(("a", "text"), ("y", NUMERIC)), target="y")


class TestTaskSpec:
    def test_defaults(self):
        spec = TaskSpec(target="y")
        assert spec.metric == "accuracy"
        assert spec.refit_fraction == 0.25

    def test_rejects_zero_budget(self):
        with pytest.raises(ValueError):
            TaskSpec(target="y", time_budget_s=0.0)

    def test_rejects_unknown_metric(self):
        with pytest.raises(ValueError):
            TaskSpec(target="y", metric="f1")


class TestAlign:
    def make_train(self):
        return parse_csv(CSV, "label")

    def test_reorders_columns(self):
        train = self.make_train()
        test = parse_csv(b"income,age,city\n10,50,york\n", None)
        aligned = align_test(train, test)
        assert aligned.schema.names == train.schema.names
        assert aligned.column("age")[0] == 50.0

    def test_unseen_category_becomes_unknown_token(self):
        train = self.make_train()
        test = parse_csv(b"age,city,income\n20,paris,100\n", None)
        aligned = align_test(train, test)
        assert aligned.column("city")[0] == UNKNOWN_TOKEN

    def test_missing_feature_column_is_an_error(self):
        train = self.make_train()
        test = parse_csv(b"age,income\n20,100\n", None)
        with pytest.raises(ParseError, match="city"):
            align_test(train, test)

    def test_extra_columns_dropped(self):
        train = self.make_train()
        test = parse_csv(b"age,city,income,extra\n20,york,100,zzz\n", None)
        aligned = align_test(train, test)
        assert aligned.schema.names == train.schema.names

    def test_labels_reencoded_against_train_vocab(self):
        train = self.make_train()
        test = parse_csv(b"age,city,income,label\n20,york,100,no\n", "label")
        aligned = align_test(train, test)
        assert aligned.labels.tolist() == [0]
        assert aligned.label_vocab == train.label_vocab

    def test_unseen_test_class_is_an_error(self):
        train = self.make_train()
        test = parse_csv(b"age,city,income,label\n20,york,100,maybe\n", "label")
        with pytest.raises(ParseError, match="maybe"):
            align_test(train, test)

    def test_align_is_idempotent(self):
        train = self.make_train()
        test = parse_csv(b"age,city,income\n20,paris,100\n", None)
        once = align_test(train, test)
        twice = align_to(train.schema, category_values(train), train.label_vocab, once)
        assert once.column("city").tolist() == twice.column("city").tolist()


class TestPredictionMatrix:
    def test_argmax_tie_goes_to_lowest_class_index(self):
        m = PredictionMatrix(("a", "b"), np.array([[0.5, 0.5], [0.2, 0.8]]))
        assert m.argmax_labels().tolist() == [0, 1]

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            PredictionMatrix(("a", "b", "c"), np.ones((2, 2)))


class TestPipelineRecord:
    RECORD = PipelineRecord(
        id="r-1",
        searcher_id="s",
        steps=(("impute_mean", {}), ("gaussian_nb", {"var_smoothing": 1e-9})),
        validation_score=0.75,
        artifact_ref="models/r-1.bin",
        has_oof=True,
        discovered_at=4,
    )

    def test_json_round_trip(self):
        again = PipelineRecord.from_json_obj(self.RECORD.to_json_obj())
        assert again == self.RECORD

    def test_rejects_empty_steps(self):
        with pytest.raises(ValueError):
            PipelineRecord(
                id="x", searcher_id="s", steps=(), validation_score=0.5,
                artifact_ref=None, has_oof=False, discovered_at=0,
            )

    def test_rejects_nonfinite_score(self):
        with pytest.raises(ValueError):
            PipelineRecord(
                id="x", searcher_id="s", steps=(("a", {}),),
                validation_score=float("nan"), artifact_ref=None,
                has_oof=False, discovered_at=0,
            )


def test_manifest_round_trip(tmp_path):
    d = parse_csv(CSV, "label")
    csv_path = tmp_path / "train.csv"
    csv_path.write_bytes(CSV)
    manifest = write_manifest(d, csv_path)
    assert manifest.name == "train.csv.manifest.json"
    loaded = read_manifest(csv_path)
    assert loaded["target"] == "label"
    assert loaded["n_rows"] == 4
    assert loaded["label_vocab"] == ["no", "yes"]
