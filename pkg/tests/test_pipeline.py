import math

import numpy as np
import pytest

from ens2.pipeline import (
    ARTIFACT_MAGIC,
    CandidatePipeline,
    PipelineFitError,
    candidate_from_steps,
    cv_evaluate,
    fit_candidate,
    fold_metric,
    load_fitted_pipeline,
    normalized_score,
    refit,
)
from ens2.primitives import PRIMITIVE_REGISTRY
from ens2.resampling import kfold
from ens2.tabular import parse_csv

STEPS = (("impute_mean", {}), ("onehot", {}), ("gaussian_nb", {}))
SCALED_STEPS = (
    ("impute_mean", {}),
    ("onehot", {}),
    ("standardize", {}),
    ("softmax_linear", {"l2": 1e-3}),
)


@pytest.fixture(scope="module")
def small_ds():
    rng = np.random.default_rng(19)
    rows = ["x1,color,label"]
    for _ in range(60):
        cls = rng.integers(0, 2)
        x = rng.normal(cls * 3.0, 0.7)
        color = ("red", "blue")[cls] if rng.random() > 0.15 else "green"
        rows.append(f"{x},{color},{('no', 'yes')[cls]}")
    return parse_csv("\n".join(rows).encode(), "label")


class TestCandidate:
    def test_stage_order_enforced(self):
        reg = PRIMITIVE_REGISTRY
        with pytest.raises(ValueError):
            CandidatePipeline(steps=((reg["onehot"], {}), (reg["impute_mean"], {}),
                                     (reg["gaussian_nb"], {})))

    def test_estimator_required(self):
        reg = PRIMITIVE_REGISTRY
        with pytest.raises(ValueError):
            CandidatePipeline(steps=((reg["impute_mean"], {}), (reg["onehot"], {})))

    def test_scaler_is_optional(self):
        candidate_from_steps(STEPS)
        candidate_from_steps(SCALED_STEPS)

    def test_from_steps_rejects_unknown_primitive(self):
        with pytest.raises(KeyError):
            candidate_from_steps((("impute_mean", {}), ("onehot", {}),
                                  ("perceptron", {})))

    def test_describe_mentions_hyperparams(self):
        c = candidate_from_steps(
            (("impute_mean", {}), ("onehot", {}), ("knn", {"k": 7}))
        )
        assert "knn(k=7)" in c.describe()

    def test_step_descriptors_round_trip(self):
        c = candidate_from_steps(SCALED_STEPS)
        assert candidate_from_steps(c.step_descriptors).describe() == c.describe()


class TestFitAndPredict:
    def test_fit_then_predict_matches_training_labels(self, small_ds):
        fitted = fit_candidate(candidate_from_steps(STEPS), small_ds)
        pm = fitted.predict_proba_rows(small_ds)
        assert np.mean(pm.argmax_labels() == small_ds.labels) > 0.9

    def test_fit_on_row_subset(self, small_ds):
        rows = np.arange(30)
        fitted = fit_candidate(candidate_from_steps(STEPS), small_ds, rows)
        pm = fitted.predict_proba_rows(small_ds, np.arange(30, 60))
        assert pm.n_rows == 30

    def test_unlabeled_dataset_rejected(self, small_ds):
        unlabeled = parse_csv(b"x1,color\n1.0,red\n", None)
        with pytest.raises(PipelineFitError):
            fit_candidate(candidate_from_steps(STEPS), unlabeled)

    def test_predict_proba_aligns_raw_test_data(self, small_ds):
        fitted = fit_candidate(candidate_from_steps(STEPS), small_ds)
        test = parse_csv(b"color,x1,extra\nred,0.1,9\npurple,2.9,9\n", None)
        pm = fitted.predict_proba(test)
        assert pm.n_rows == 2
        assert pm.label_vocab == small_ds.label_vocab


class TestArtifacts:
    def test_save_load_round_trip(self, small_ds, tmp_path):
        fitted = fit_candidate(candidate_from_steps(SCALED_STEPS), small_ds)
        path = tmp_path / "m.bin"
        fitted.save(path)
        again = load_fitted_pipeline(path)
        a = fitted.predict_proba_rows(small_ds).probs
        b = again.predict_proba_rows(small_ds).probs
        np.testing.assert_array_equal(a, b)
        assert again.step_descriptors == fitted.step_descriptors

    def test_magic_header_present(self, small_ds, tmp_path):
        fitted = fit_candidate(candidate_from_steps(STEPS), small_ds)
        path = tmp_path / "m.bin"
        fitted.save(path)
        assert path.read_bytes().startswith(ARTIFACT_MAGIC)

    def test_load_rejects_garbage(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"not a model")
        with pytest.raises(ValueError, match="not a model artifact"):
            load_fitted_pipeline(path)

    def test_load_rejects_future_version(self, small_ds, tmp_path):
        fitted = fit_candidate(candidate_from_steps(STEPS), small_ds)
        path = tmp_path / "m.bin"
        fitted.save(path)
        data = bytearray(path.read_bytes())
        data[len(ARTIFACT_MAGIC)] = 99
        path.write_bytes(bytes(data))
        with pytest.raises(ValueError, match="version"):
            load_fitted_pipeline(path)

    def test_save_leaves_no_temp_files(self, small_ds, tmp_path):
        fitted = fit_candidate(candidate_from_steps(STEPS), small_ds)
        fitted.save(tmp_path / "m.bin")
        assert sorted(p.name for p in tmp_path.iterdir()) == ["m.bin"]


class TestMetrics:
    def test_fold_metric_accuracy(self, small_ds):
        fitted = fit_candidate(candidate_from_steps(STEPS), small_ds)
        pm = fitted.predict_proba_rows(small_ds)
        acc = fold_metric("accuracy", pm, small_ds.labels)
        assert 0.0 <= acc <= 1.0

    def test_normalized_score_accuracy_is_identity(self):
        assert normalized_score("accuracy", 0.73) == 0.73

    def test_normalized_score_logloss_maps_to_unit_interval(self):
        assert normalized_score("logloss", 0.0) == 1.0
        assert normalized_score("logloss", math.log(2)) == pytest.approx(0.5)
        assert 0.0 < normalized_score("logloss", 10.0) < 0.01


class TestCvEvaluate:
    def test_every_row_predicted_exactly_once(self, small_ds):
        folds = kfold(small_ds.n_rows, 3, labels=small_ds.labels, seed=0)
        _, oof = cv_evaluate(candidate_from_steps(STEPS), small_ds, folds)
        assert oof.probs.shape == (small_ds.n_rows, 2)
        assert not np.any(np.isnan(oof.probs))
        np.testing.assert_allclose(oof.probs.sum(axis=1), 1.0, atol=1e-9)

    def test_hook_sees_disjoint_train_and_predict_rows(self, small_ds):
        folds = kfold(small_ds.n_rows, 3, labels=small_ds.labels, seed=0)
        seen = []

        def hook(fold, train_rows, predict_rows):
            assert len(np.intersect1d(train_rows, predict_rows)) == 0
            assert len(train_rows) + len(predict_rows) == small_ds.n_rows
            seen.append((fold, predict_rows.copy()))

        cv_evaluate(candidate_from_steps(STEPS), small_ds, folds, cv_hook=hook)
        assert [f for f, _ in seen] == [0, 1, 2]
        covered = np.concatenate([rows for _, rows in seen])
        np.testing.assert_array_equal(np.sort(covered), np.arange(small_ds.n_rows))

    def test_score_is_mean_of_fold_metrics(self, small_ds):
        folds = kfold(small_ds.n_rows, 3, labels=small_ds.labels, seed=0)
        score, _ = cv_evaluate(candidate_from_steps(STEPS), small_ds, folds)
        assert 0.0 <= score <= 1.0

    def test_fold_mismatch_rejected(self, small_ds):
        folds = kfold(10, 2, seed=0)
        with pytest.raises(ValueError):
            cv_evaluate(candidate_from_steps(STEPS), small_ds, folds)

    def test_logloss_metric_supported(self, small_ds):
        folds = kfold(small_ds.n_rows, 3, labels=small_ds.labels, seed=0)
        raw, _ = cv_evaluate(
            candidate_from_steps(STEPS), small_ds, folds, metric="logloss"
        )
        assert raw >= 0.0


def test_refit_persists_loadable_model(small_ds, tmp_path):
    path = refit(candidate_from_steps(STEPS), small_ds, tmp_path / "final.bin")
    model = load_fitted_pipeline(path)
    assert model.label_vocab == small_ds.label_vocab
