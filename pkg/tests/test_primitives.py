import numpy as np
import pytest

from ens2.primitives import (
    CATEGORICAL,
    NUMERIC,
    PRIMITIVE_REGISTRY,
    STAGE_ESTIMATOR,
    UNKNOWN_TOKEN,
    DecisionTree,
    FeatureFrame,
    GaussianNB,
    Imputer,
    KNearestNeighbors,
    OneHotEncoder,
    OrdinalEncoder,
    SoftmaxLinear,
    Standardizer,
    builtin_primitive_library,
)


def num_col(*values):
    return np.array(values, dtype=np.float64)


def cat_col(*values):
    return np.array(values, dtype=object)


class TestImputer:
    def test_mean_median_mode_fills(self):
        frame = FeatureFrame(
            kinds=(NUMERIC,), cols=(num_col(1.0, 2.0, np.nan, 5.0),)
        )
        assert Imputer("mean").fit(frame).fills_ == [pytest.approx(8 / 3)]
        assert Imputer("median").fit(frame).fills_ == [2.0]

    def test_numeric_mode_tie_prefers_smallest(self):
        frame = FeatureFrame(kinds=(NUMERIC,), cols=(num_col(2.0, 1.0, 2.0, 1.0),))
        assert Imputer("mode").fit(frame).fills_ == [1.0]

    def test_all_missing_numeric_fills_zero(self):
        frame = FeatureFrame(kinds=(NUMERIC,), cols=(num_col(np.nan, np.nan),))
        imp = Imputer("mean").fit(frame)
        out = imp.transform(frame)
        assert out.cols[0].tolist() == [0.0, 0.0]

    def test_categorical_mode_tie_prefers_lexicographic(self):
        frame = FeatureFrame(
            kinds=(CATEGORICAL,), cols=(cat_col("b", "a", "b", "a", None),)
        )
        imp = Imputer("mode").fit(frame)
        assert imp.transform(frame).cols[0].tolist() == ["b", "a", "b", "a", "a"]

    def test_all_missing_categorical_uses_unknown_token(self):
        frame = FeatureFrame(kinds=(CATEGORICAL,), cols=(cat_col(None, None),))
        imp = Imputer("mean").fit(frame)
        assert imp.transform(frame).cols[0].tolist() == [UNKNOWN_TOKEN] * 2

    def test_transform_leaves_present_values_alone(self):
        frame = FeatureFrame(kinds=(NUMERIC,), cols=(num_col(1.0, np.nan, 3.0),))
        out = Imputer("mean").fit(frame).transform(frame)
        assert out.cols[0].tolist() == [1.0, 2.0, 3.0]

    def test_unknown_strategy(self):
        with pytest.raises(ValueError):
            Imputer("geometric")


class TestOneHot:
    def test_indicator_columns_in_sorted_order(self):
        frame = FeatureFrame(kinds=(CATEGORICAL,), cols=(cat_col("b", "a", "b"),))
        enc = OneHotEncoder().fit(frame)
        out = enc.transform(frame)
        np.testing.assert_array_equal(out, [[0, 1], [1, 0], [0, 1]])

    def test_unseen_value_maps_to_zero_vector(self):
        train = FeatureFrame(kinds=(CATEGORICAL,), cols=(cat_col("a", "b"),))
        enc = OneHotEncoder().fit(train)
        test = FeatureFrame(kinds=(CATEGORICAL,), cols=(cat_col("c", "a"),))
        np.testing.assert_array_equal(enc.transform(test), [[0, 0], [1, 0]])

    def test_numeric_passthrough(self):
        frame = FeatureFrame(
            kinds=(NUMERIC, CATEGORICAL),
            cols=(num_col(1.5, 2.5), cat_col("x", "y")),
        )
        out = OneHotEncoder().fit(frame).transform(frame)
        assert out.shape == (2, 3)
        np.testing.assert_array_equal(out[:, 0], [1.5, 2.5])


class TestOrdinal:
    def test_sorted_vocabulary_indices(self):
        frame = FeatureFrame(kinds=(CATEGORICAL,), cols=(cat_col("c", "a", "b"),))
        out = OrdinalEncoder().fit(frame).transform(frame)
        np.testing.assert_array_equal(out.ravel(), [2.0, 0.0, 1.0])

    def test_unseen_value_becomes_minus_one(self):
        train = FeatureFrame(kinds=(CATEGORICAL,), cols=(cat_col("a", "b"),))
        enc = OrdinalEncoder().fit(train)
        test = FeatureFrame(kinds=(CATEGORICAL,), cols=(cat_col("z",),))
        assert enc.transform(test).ravel().tolist() == [-1.0]


class TestStandardizer:
    def test_zero_mean_unit_std(self):
        rng = np.random.default_rng(0)
        x = rng.normal(3.0, 2.0, size=(200, 3))
        z = Standardizer().fit(x).transform(x)
        np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(z.std(axis=0), 1.0)

    def test_constant_column_centers_without_dividing_by_zero(self):
        x = np.array([[5.0, 1.0], [5.0, 2.0]])
        z = Standardizer().fit(x).transform(x)
        assert np.all(np.isfinite(z))
        np.testing.assert_array_equal(z[:, 0], [0.0, 0.0])


def blobs(rng, n_per=40, n_classes=3):
    xs, ys = [], []
    for c in range(n_classes):
        center = np.array([c * 4.0, -c * 4.0])
        xs.append(rng.normal(0, 0.8, size=(n_per, 2)) + center)
        ys.append(np.full(n_per, c))
    return np.vstack(xs), np.concatenate(ys)


@pytest.mark.parametrize(
    "make",
    [
        lambda: GaussianNB(),
        lambda: KNearestNeighbors(k=5),
        lambda: DecisionTree(max_depth=4),
        lambda: SoftmaxLinear(),
    ],
    ids=["gaussian_nb", "knn", "decision_tree", "softmax_linear"],
)
def test_estimators_learn_separated_blobs(make):
    rng = np.random.default_rng(11)
    x, y = blobs(rng)
    vocab = ("a", "b", "c")
    model = make().fit(x, y, vocab)
    pm = model.predict_proba(x)
    assert pm.label_vocab == vocab
    np.testing.assert_allclose(pm.probs.sum(axis=1), 1.0, atol=1e-9)
    assert np.mean(pm.argmax_labels() == y) > 0.95


def test_gaussian_nb_handles_constant_features():
    x = np.column_stack([np.ones(20), np.arange(20.0)])
    y = (np.arange(20) >= 10).astype(np.int64)
    pm = GaussianNB().fit(x, y, ("lo", "hi")).predict_proba(x)
    assert np.all(np.isfinite(pm.probs))


def test_knn_caps_k_at_train_size():
    x = np.array([[0.0], [1.0]])
    y = np.array([0, 1])
    model = KNearestNeighbors(k=10).fit(x, y, ("a", "b"))
    pm = model.predict_proba(np.array([[0.1]]))
    np.testing.assert_allclose(pm.probs.sum(axis=1), 1.0)


def test_knn_k1_memorizes_training_points():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(30, 2))
    y = rng.integers(0, 2, size=30)
    pm = KNearestNeighbors(k=1).fit(x, y, ("a", "b")).predict_proba(x)
    np.testing.assert_array_equal(pm.argmax_labels(), y)


class TestDecisionTree:
    def test_max_depth_one_is_a_stump(self):
        x = np.array([[0.0], [1.0], [2.0], [3.0]])
        y = np.array([0, 0, 1, 1])
        tree = DecisionTree(max_depth=1).fit(x, y, ("a", "b"))
        root = tree.root_
        assert "feature" in root
        assert "leaf" in root["left"] and "leaf" in root["right"]

    def test_pure_node_stops_growing(self):
        x = np.array([[0.0], [1.0], [2.0]])
        y = np.array([1, 1, 1])
        tree = DecisionTree(max_depth=5).fit(x, y, ("a", "b"))
        assert "leaf" in tree.root_

    def test_min_leaf_blocks_tiny_splits(self):
        x = np.array([[0.0], [1.0], [2.0], [3.0]])
        y = np.array([0, 1, 1, 1])
        tree = DecisionTree(max_depth=3, min_leaf=2).fit(x, y, ("a", "b"))
        node = tree.root_
        if "feature" in node:
            assert node["threshold"] != 0.5

    def test_identical_rows_cannot_split(self):
        x = np.zeros((6, 2))
        y = np.array([0, 1, 0, 1, 0, 1])
        tree = DecisionTree(max_depth=4).fit(x, y, ("a", "b"))
        assert "leaf" in tree.root_
        pm = tree.predict_proba(x)
        np.testing.assert_allclose(pm.probs, 0.5)

    def test_deterministic_fit(self):
        def plain(node):
            if "leaf" in node:
                return {"leaf": node["leaf"].tolist()}
            return {
                "feature": node["feature"],
                "threshold": node["threshold"],
                "left": plain(node["left"]),
                "right": plain(node["right"]),
            }

        rng = np.random.default_rng(3)
        x = rng.normal(size=(60, 3))
        y = rng.integers(0, 3, size=60)
        t1 = DecisionTree(max_depth=4).fit(x, y, ("a", "b", "c"))
        t2 = DecisionTree(max_depth=4).fit(x, y, ("a", "b", "c"))
        assert plain(t1.root_) == plain(t2.root_)


def test_library_matches_registry():
    lib = builtin_primitive_library()
    assert {p.name for p in lib} == set(PRIMITIVE_REGISTRY)
    for p in lib:
        assert PRIMITIVE_REGISTRY[p.name].stage == p.stage


def test_estimator_factories_accept_their_grids():
    for p in builtin_primitive_library():
        if p.stage != STAGE_ESTIMATOR:
            p.make({})
            continue
        for key, values in p.hyperparam_space.items():
            for v in values:
                p.make({key: v})
