from fractions import Fraction

import numpy as np
import pytest
from sklearn.base import clone

from lvmorph.learn import (DISEASED, NORMAL, ConfusionMatrix, FisherLDA, LDAKNNClassifier,
                           LearningError, LinearRegressionMV, MLPBinaryClassifier,
                           binarize_ds, knn_classify, lda_fit, lda_project, loo_evaluate,
                           mlp_gradient, mlp_loss, mlp_predict, mlp_train, mvr_fit,
                           mvr_predict, pearson_correlation)

# --- LDA


def test_lda_1d_margin():
    X = np.array([[0.0], [1.0], [10.0], [11.0]])
    y = np.array([0, 0, 1, 1])
    z = FisherLDA().fit(X, y).transform(X)[:, 0]
    a, b = z[y == 0], z[y == 1]
    assert max(a) < min(b) or max(b) < min(a)


def test_lda_identical_means_rejected():
    X = np.array([[0.0, 1.0], [1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    with pytest.raises(LearningError, match="coincide"):
        FisherLDA().fit(X, [0, 0, 1, 1])


def test_lda_single_class_rejected():
    with pytest.raises(LearningError):
        FisherLDA().fit(np.zeros((4, 2)), [1, 1, 1, 1])


def test_lda_high_dimensional_ridge(rng):
    X = rng.normal(size=(32, 340))
    y = np.repeat([0, 1], 16)
    X[y == 1] += 0.5
    model = lda_fit(X, y)
    assert model.epsilon_ > 0
    assert np.isclose(np.linalg.norm(model.coef_), 1.0)
    z = model.transform(X)[:, 0]
    assert max(z[y == 0]) < min(z[y == 1])
    assert np.allclose(model.within_scatter_, model.within_scatter_.T, atol=1e-9)
    assert np.allclose(model.between_scatter_, model.between_scatter_.T, atol=1e-9)


def test_lda_no_ridge_when_well_posed(rng):
    X = rng.normal(size=(50, 3))
    y = np.repeat([0, 1], 25)
    assert FisherLDA().fit(X, y).epsilon_ == 0.0


def test_lda_projection_examples(rng):
    X = rng.normal(size=(30, 4))
    y = np.repeat([0, 1], 15)
    X[y == 1, 0] += 3
    model = lda_fit(X, y)
    assert lda_project(model, model.mean_) == pytest.approx(0.0, abs=1e-12)
    assert lda_project(model, model.mean_ + model.coef_) == pytest.approx(1.0)
    shifted = lda_fit(X + 7.5, y)
    assert np.allclose(shifted.transform(X + 7.5), model.transform(X), atol=1e-9)
    with pytest.raises(LearningError):
        lda_project(model, np.zeros(3))


# --- k-NN


def test_knn_examples():
    assert knn_classify([0.0, 1.0, 2.0], ["a", "b", "c"], 1.0, 1) == "b"
    assert knn_classify([0.0, 0.1, 5.0], ["A", "A", "B"], 0.05, 3) == "A"
    assert knn_classify([-1, 0, 10, 11, 12], ["A", "A", "B", "B", "B"], 10.5, 3) == "B"
    # equidistant neighbours: lower training index wins
    assert knn_classify([1.0, -1.0], [1, 0], 0.0, 1) == 1
    with pytest.raises(LearningError):
        knn_classify([0, 1, 2], [0, 1, 0], 0.0, 2)
    with pytest.raises(LearningError):
        knn_classify([0, 1], [0, 1], 0.0, 3)


def test_lda_knn_affine_and_scale_invariance(rng):
    X = rng.normal(size=(24, 5))
    y = np.repeat([0, 1], 12)
    X[y == 1] += 0.8
    Q = rng.normal(size=(10, 5)) + 0.4
    base = LDAKNNClassifier(3).fit(X, y).predict(Q)
    moved = LDAKNNClassifier(3).fit(2.5 * X + 4.0, y).predict(2.5 * Q + 4.0)
    assert np.array_equal(base, moved)


def test_one_nn_returns_own_label(rng):
    X = rng.normal(size=(20, 3))
    y = rng.integers(0, 2, 20)
    y[:2] = [0, 1]
    assert np.array_equal(LDAKNNClassifier(1).fit(X, y).predict(X), y)


# --- MLP


def test_xor_is_learned():
    X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
    y = np.array([0, 1, 1, 0])
    model = mlp_train(X, y, hidden=4, epochs=5000, lr=0.3, seed=0)
    assert np.array_equal(model.predict(X), y)
    p, label = mlp_predict(model, [0, 1])
    assert label == 1 and p >= 0.5


def test_constant_labels():
    X = np.array([[0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    model = MLPBinaryClassifier(3, 500).fit(X, [DISEASED] * 3)
    assert np.all(model.predict(X) == DISEASED)
    assert model.loss_curve_[-1] < model.loss_curve_[0]


def test_zero_weights_output_half():
    model = MLPBinaryClassifier(3, 0).fit(np.zeros((2, 4)), [0, 1])
    model.coefs_ = [np.zeros((4, 3)), np.zeros(3), np.zeros(3), 0.0]
    assert mlp_predict(model, np.ones(4))[0] == 0.5
    with pytest.raises(LearningError):
        mlp_predict(model, np.ones(3))


def _flat(params):
    return np.concatenate([np.ravel(p) for p in params])


def _unflat(v, d, h):
    return [v[:d * h].reshape(d, h), v[d * h:d * h + h], v[d * h + h:d * h + 2 * h],
            float(v[-1])]


def test_gradient_matches_finite_differences(rng):
    d, h = 5, 4
    X = rng.normal(size=(12, d))
    y = rng.integers(0, 2, 12).astype(float)
    for _ in range(10):
        params = [rng.uniform(-0.5, 0.5, (d, h)), rng.uniform(-0.5, 0.5, h),
                  rng.uniform(-0.5, 0.5, h), float(rng.uniform(-0.5, 0.5))]
        g = _flat(mlp_gradient(params, X, y))
        v = _flat(params)
        num = np.empty_like(v)
        for i in range(len(v)):
            e = np.zeros_like(v)
            e[i] = 1e-5
            num[i] = (mlp_loss(_unflat(v + e, d, h), X, y)
                      - mlp_loss(_unflat(v - e, d, h), X, y)) / 2e-5
        rel = np.abs(g - num) / np.maximum(np.abs(g) + np.abs(num), 1e-8)
        assert rel.max() < 1e-4


def test_mlp_deterministic(rng):
    X = rng.normal(size=(10, 3))
    y = np.array([0, 1] * 5)
    a = MLPBinaryClassifier(5, 200, random_state=7).fit(X, y)
    b = MLPBinaryClassifier(5, 200, random_state=7).fit(X, y)
    assert all(np.array_equal(p, q) for p, q in zip(a.coefs_, b.coefs_))


def test_mlp_divergence_reports_epoch():
    X = np.array([[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(LearningError, match="epoch 1"):
        MLPBinaryClassifier(2, 50, learning_rate=np.inf).fit(X, [0, 1])


# --- regression


def test_mvr_exact_line():
    x = np.arange(5.0)[:, None]
    model = mvr_fit(x, 2 + 3 * x[:, 0])
    assert np.allclose(model.coef_, [2, 3], atol=1e-9)
    assert model.mse_ < 1e-18


def test_mvr_constant_target(rng):
    X = rng.normal(size=(10, 4))
    model = mvr_fit(X, np.full(10, 42.0))
    assert model.coef_[0] == pytest.approx(42.0)
    assert np.allclose(model.coef_[1:], 0.0, atol=1e-12)


def test_mvr_recovers_planted_coefficients(rng):
    X = rng.normal(size=(30, 20))
    beta = rng.normal(size=20)
    y = X @ beta + 1.5
    model = mvr_fit(X, y)
    assert np.allclose(model.coef_[1:], beta, atol=1e-6)
    assert model.intercept_ == pytest.approx(1.5, abs=1e-6)
    x_new = rng.normal(size=20)
    assert mvr_predict(model, x_new) == pytest.approx(x_new @ beta + 1.5, abs=1e-6)
    assert np.allclose(X.T @ model.residuals_, 0.0, atol=1e-6)


def test_mvr_predict_examples():
    model = LinearRegressionMV().fit([[0.0], [1.0]], [2.0, 5.0])
    assert mvr_predict(model, [4.0]) == pytest.approx(14.0)
    model.coef_ = np.zeros(2)
    assert mvr_predict(model, [4.0]) == 0.0
    with pytest.raises(LearningError):
        mvr_predict(model, [1.0, 2.0])


def test_mvr_underdetermined_is_min_norm(rng):
    X = rng.normal(size=(8, 20))
    y = rng.normal(size=8)
    model = mvr_fit(X, y)
    assert model.min_norm_
    Xc = X - X.mean(axis=0)
    expected = np.linalg.pinv(Xc) @ (y - y.mean())
    assert np.allclose(model.coef_[1:], expected, atol=1e-9)
    assert model.mse_ < 1e-20


def test_mvr_rejects_non_finite():
    with pytest.raises(ValueError):
        mvr_fit([[1.0], [np.nan]], [1.0, 2.0])


# --- Pearson and labels


def test_pearson_examples(rng):
    a = rng.normal(size=50)
    assert pearson_correlation(a, 2 * a + 1) == pytest.approx(1.0)
    assert pearson_correlation(a, -a) == pytest.approx(-1.0)
    assert pearson_correlation([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-12)
    b = rng.normal(size=50)
    r = pearson_correlation(a, b)
    assert -1 <= r <= 1
    assert pearson_correlation(3 * a + 2, 0.5 * b - 9) == pytest.approx(r, abs=1e-12)
    with pytest.raises(LearningError):
        pearson_correlation([1, 1, 1], [1, 2, 3])


def test_binarize_ds():
    assert binarize_ds(69.9) == NORMAL
    assert binarize_ds(70.0) == DISEASED
    assert binarize_ds(0) == NORMAL
    with pytest.raises(LearningError):
        binarize_ds(101)


# --- confusion matrices (published counts)


@pytest.mark.parametrize("counts, acc, fa, miss", [
    ((13, 3, 3, 13), Fraction(13, 16), Fraction(3, 16), Fraction(3, 16)),
    ((14, 2, 3, 13), Fraction(27, 32), Fraction(3, 16), Fraction(1, 8)),
    ((14, 2, 1, 15), Fraction(29, 32), Fraction(1, 16), Fraction(1, 8)),
])
def test_published_confusion_matrices(counts, acc, fa, miss):
    cm = ConfusionMatrix.from_counts(counts)
    assert (cm.accuracy, cm.false_alarm_rate, cm.miss_rate) == (acc, fa, miss)
    assert cm.total == 32


def test_confusion_from_labels():
    cm = ConfusionMatrix.from_labels([1, 1, 0, 0, 1], [1, 0, 0, 1, 1])
    assert cm.matrix() == [[2, 1], [1, 1]]
    with pytest.raises(LearningError):
        ConfusionMatrix(1, -1, 0, 0)


# --- leave-one-out


def test_loo_separable_clusters(rng):
    X = np.vstack([rng.normal(0, 0.3, (10, 4)), rng.normal(3, 0.3, (10, 4))])
    y = np.repeat([NORMAL, DISEASED], 10)
    res = loo_evaluate(LDAKNNClassifier(1), X, y)
    assert res.confusion.accuracy == 1
    assert res.confusion.total == 20


def test_loo_skips_single_class_folds():
    X = np.array([[0.0], [1.0], [2.0], [3.0], [5.0]])
    y = np.array([0, 0, 0, 0, 1])
    with pytest.warns(RuntimeWarning, match="skipped 1"):
        res = loo_evaluate(LDAKNNClassifier(1), X, y)
    assert res.skipped == [4]
    assert res.confusion.total == len(y) - len(res.skipped)


def test_loo_regression_correlation(rng):
    X = rng.normal(size=(15, 2))
    y = X @ [2.0, -1.0] + 0.01 * rng.normal(size=15)
    res = loo_evaluate(LinearRegressionMV(), X, y, task="regression")
    assert res.correlation > 0.99


def test_loo_threads_match_serial(rng):
    X = rng.normal(size=(16, 3))
    y = np.repeat([0, 1], 8)
    X[y == 1] += 1.0
    a = loo_evaluate(LDAKNNClassifier(1), X, y)
    b = loo_evaluate(LDAKNNClassifier(1), X, y, n_jobs=3)
    assert a.predictions == b.predictions


def test_estimators_clone():
    for est in (FisherLDA(), LDAKNNClassifier(3, 1e-3), MLPBinaryClassifier(4),
                LinearRegressionMV(0.1)):
        assert clone(est).get_params() == est.get_params()
