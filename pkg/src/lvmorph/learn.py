"""Two-class LDA + k-NN, a one-hidden-layer perceptron, multivariate linear
regression, and leave-one-out evaluation."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin, TransformerMixin, clone
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

DISEASED = 1
NORMAL = 0
LABEL_NAMES = {DISEASED: "diseased", NORMAL: "normal"}
DS_THRESHOLD = 70.0


class LearningError(ValueError):
    pass


# ----------------------------------------------------------------------- LDA

class FisherLDA(BaseEstimator, TransformerMixin):
    """Two-class Fisher discriminant projecting onto one direction.

    ``coef_`` is the unit vector along ``(S_w + eps I)^-1 (mu_1 - mu_0)``
    where ``mu_1`` is the mean of ``classes_[1]``. The ridge ``eps`` is
    ``1e-6 * trace(S_w) / d`` when S_w is singular or there are no more
    samples than dimensions, otherwise zero.
    """

    def __init__(self, ridge_scale=1e-6):
        self.ridge_scale = ridge_scale

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        classes = np.unique(y)
        if len(classes) != 2:
            raise LearningError(f"LDA needs exactly two classes, got {len(classes)}")
        if len(X) < 3:
            raise LearningError("LDA needs at least three samples")
        m, d = X.shape
        self.classes_ = classes
        self.means_ = np.array([X[y == c].mean(axis=0) for c in classes])
        self.mean_ = X.mean(axis=0)
        sw = np.zeros((d, d))
        sb = np.zeros((d, d))
        for c, mu in zip(classes, self.means_):
            centered = X[y == c] - mu
            sw += centered.T @ centered
            diff = (mu - self.mean_)[:, None]
            sb += diff @ diff.T
        self.within_scatter_ = (sw + sw.T) / 2.0
        self.between_scatter_ = (sb + sb.T) / 2.0
        diff = self.means_[1] - self.means_[0]
        if not np.any(np.abs(diff) > 1e-12 * (1.0 + np.abs(self.means_).max())):
            raise LearningError("class means coincide; no discriminant direction")
        eps = 0.0
        if m <= d or np.linalg.matrix_rank(self.within_scatter_) < d:
            tr = np.trace(self.within_scatter_)
            eps = self.ridge_scale * (tr / d if tr > 0 else 1.0)
        w = np.linalg.solve(self.within_scatter_ + eps * np.eye(d), diff)
        norm = np.linalg.norm(w)
        if not (np.isfinite(norm) and norm > 0):
            raise LearningError("degenerate discriminant direction")
        self.coef_ = w / norm
        self.epsilon_ = eps
        self.n_features_in_ = d
        return self

    def transform(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise LearningError(
                f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return ((X - self.mean_) @ self.coef_)[:, None]


def lda_fit(X, labels):
    return FisherLDA().fit(X, labels)


def lda_project(model, x):
    x = np.asarray(x, dtype=float)
    return float(model.transform(x.reshape(1, -1))[0, 0])


# ---------------------------------------------------------------------- k-NN

def knn_classify(train_scalars, train_labels, query, k=1):
    """Majority label of the ``k`` nearest 1-D training values.

    Distance ties go to the lower training index.
    """
    t = np.asarray(train_scalars, dtype=float).ravel()
    labels = np.asarray(train_labels)
    if k < 1 or k % 2 == 0:
        raise LearningError(f"k must be a positive odd number, got {k}")
    if k > len(t):
        raise LearningError(f"k={k} exceeds the {len(t)} training samples")
    order = np.argsort(np.abs(t - float(query)), kind="stable")[:k]
    values, counts = np.unique(labels[order], return_counts=True)
    best = counts.max()
    # with two classes and odd k there is no vote tie
    for lab in labels[order]:
        if counts[values == lab][0] == best:
            return lab


class NearestNeighbor1D(BaseEstimator, ClassifierMixin):
    def __init__(self, n_neighbors=1):
        self.n_neighbors = n_neighbors

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        if X.shape[1] != 1:
            raise LearningError("NearestNeighbor1D works on one projected coordinate")
        if self.n_neighbors % 2 == 0 or not 1 <= self.n_neighbors <= len(X):
            raise LearningError(f"invalid n_neighbors={self.n_neighbors} for {len(X)} samples")
        self.train_ = X[:, 0]
        self.labels_ = y
        self.classes_ = np.unique(y)
        return self

    def predict(self, X):
        check_is_fitted(self, "train_")
        X = check_array(X, dtype=np.float64)
        return np.array([knn_classify(self.train_, self.labels_, q, self.n_neighbors)
                         for q in X[:, 0]])


class LDAKNNClassifier(BaseEstimator, ClassifierMixin):
    """Fisher projection to 1-D followed by k-NN on the projected values."""

    def __init__(self, n_neighbors=1, ridge_scale=1e-6):
        self.n_neighbors = n_neighbors
        self.ridge_scale = ridge_scale

    def fit(self, X, y):
        self.lda_ = FisherLDA(self.ridge_scale).fit(X, y)
        self.knn_ = NearestNeighbor1D(self.n_neighbors).fit(self.lda_.transform(X), y)
        self.classes_ = self.lda_.classes_
        return self

    def predict(self, X):
        check_is_fitted(self, "lda_")
        return self.knn_.predict(self.lda_.transform(X))


# ----------------------------------------------------------------------- MLP

def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _forward(params, X):
    w1, b1, w2, b2 = params
    hidden = _sigmoid(X @ w1 + b1)
    return hidden, _sigmoid(hidden @ w2 + b2)


def mlp_loss(params, X, y):
    """Half the summed squared error of the logistic output."""
    _, out = _forward(params, X)
    return 0.5 * np.sum((out - y) ** 2)


def mlp_gradient(params, X, y):
    w1, b1, w2, b2 = params
    hidden, out = _forward(params, X)
    delta_out = (out - y) * out * (1.0 - out)
    g_w2 = hidden.T @ delta_out
    g_b2 = delta_out.sum()
    delta_hidden = np.outer(delta_out, w2) * hidden * (1.0 - hidden)
    g_w1 = X.T @ delta_hidden
    g_b1 = delta_hidden.sum(axis=0)
    return g_w1, g_b1, g_w2, g_b2


class MLPBinaryClassifier(BaseEstimator, ClassifierMixin):
    """d -> h -> 1 logistic perceptron trained by full-batch gradient descent.

    Loss is half the summed squared error, so a full-batch step matches one
    epoch of per-sample backpropagation; weights start uniform in
    [-0.5, 0.5]. Outputs at or above 0.5 are the positive class
    (``classes_[1]``).
    """

    def __init__(self, hidden=10, epochs=2000, learning_rate=0.3, random_state=0):
        self.hidden = hidden
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.random_state = random_state

    def _init_params(self, d):
        rng = np.random.default_rng(self.random_state)
        h = self.hidden
        return [rng.uniform(-0.5, 0.5, (d, h)), rng.uniform(-0.5, 0.5, h),
                rng.uniform(-0.5, 0.5, h), float(rng.uniform(-0.5, 0.5))]

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        if len(X) < 2:
            raise LearningError("MLP needs at least two samples")
        if self.hidden < 1:
            raise LearningError("hidden layer needs at least one unit")
        classes = np.unique(y)
        if len(classes) > 2:
            raise LearningError("MLPBinaryClassifier handles two classes")
        if len(classes) == 1 and classes[0] in (NORMAL, DISEASED):
            classes = np.array([NORMAL, DISEASED])
        self.classes_ = classes
        target = (y == classes[-1]).astype(float)
        params = self._init_params(X.shape[1])
        self.loss_curve_ = []
        with np.errstate(over="ignore", invalid="ignore"):
            for epoch in range(self.epochs):
                loss = mlp_loss(params, X, target)
                if not np.isfinite(loss):
                    raise LearningError(f"MLP training diverged at epoch {epoch}")
                self.loss_curve_.append(float(loss))
                grads = mlp_gradient(params, X, target)
                params = [p - self.learning_rate * g for p, g in zip(params, grads)]
        self.coefs_ = params
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "coefs_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise LearningError(
                f"expected {self.n_features_in_} features, got {X.shape[1]}")
        p = _forward(self.coefs_, X)[1]
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        p = self.predict_proba(X)[:, 1]
        return np.where(p >= 0.5, self.classes_[-1], self.classes_[0])


def mlp_train(X, labels, hidden=10, epochs=2000, lr=0.3, seed=0):
    return MLPBinaryClassifier(hidden, epochs, lr, seed).fit(X, labels)


def mlp_predict(model, x):
    """(probability of the positive class, thresholded label) for one input."""
    p = model.predict_proba(np.asarray(x, dtype=float).reshape(1, -1))[0, 1]
    return float(p), (model.classes_[-1] if p >= 0.5 else model.classes_[0])


# ---------------------------------------------------------------- regression

class LinearRegressionMV(BaseEstimator, RegressorMixin):
    """Least-squares ``y = b0 + b1 x1 + ... + bn xn``.

    Slopes come from an SVD least-squares solve on centred data, giving the
    minimum-norm slopes when the system is rank deficient (flagged in
    ``min_norm_``); the intercept is not penalized. ``ridge > 0`` adds an
    L2 penalty on the slopes instead.
    """

    def __init__(self, ridge=0.0):
        self.ridge = ridge

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        m, n = X.shape
        if m < 2:
            raise LearningError("regression needs at least two samples")
        x_mean, y_mean = X.mean(axis=0), y.mean()
        Xc, yc = X - x_mean, y - y_mean
        if self.ridge > 0:
            slopes = np.linalg.solve(Xc.T @ Xc + self.ridge * np.eye(n), Xc.T @ yc)
            rank = n
        else:
            slopes, _, rank, _ = np.linalg.lstsq(Xc, yc, rcond=None)
        self.coef_ = np.concatenate([[y_mean - x_mean @ slopes], slopes])
        self.rank_ = int(rank)
        self.min_norm_ = bool(self.ridge == 0 and (m <= n + 1 or rank < n))
        self.n_features_in_ = n
        resid = y - self.predict(X)
        self.residuals_ = resid
        self.mse_ = float(np.mean(resid ** 2))
        return self

    @property
    def intercept_(self):
        return self.coef_[0]

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise LearningError(
                f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return self.coef_[0] + X @ self.coef_[1:]


def mvr_fit(X, y, ridge=0.0):
    return LinearRegressionMV(ridge).fit(X, y)


def mvr_predict(model, x):
    return float(model.predict(np.asarray(x, dtype=float).reshape(1, -1))[0])


def pearson_correlation(a, b):
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if len(a) != len(b) or len(a) < 2:
        raise LearningError("pearson_correlation needs two equal-length sequences (n >= 2)")
    da, db = a - a.mean(), b - b.mean()
    sa, sb = np.sqrt(da @ da), np.sqrt(db @ db)
    if sa == 0 or sb == 0:
        raise LearningError("pearson_correlation is undefined for a constant input")
    ua, ub = da / sa, db / sb
    # 1 - |ua - ub|^2 / 2 keeps full precision when |r| is close to 1
    if ua @ ub >= 0:
        r = 1.0 - 0.5 * np.sum((ua - ub) ** 2)
    else:
        r = 0.5 * np.sum((ua + ub) ** 2) - 1.0
    return float(np.clip(r, -1.0, 1.0))


def binarize_ds(percent_ds, threshold=DS_THRESHOLD):
    """DISEASED when the diameter stenosis is at least ``threshold`` percent."""
    v = float(percent_ds)
    if not 0.0 <= v <= 100.0:
        raise LearningError(f"percent DS must lie in [0, 100], got {v}")
    return DISEASED if v >= threshold else NORMAL


# ------------------------------------------------------------------- metrics

@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts laid out as actual (diseased, normal) x predicted (diseased, normal)."""

    tp: int
    fn: int
    fp: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fn, self.fp, self.tn) < 0:
            raise LearningError("confusion counts must be non-negative")

    @classmethod
    def from_counts(cls, counts):
        c = [int(x) for x in counts]
        if len(c) != 4:
            raise LearningError("expected four counts: TP, FN, FP, TN")
        return cls(*c)

    @classmethod
    def from_labels(cls, actual, predicted):
        a = np.asarray(actual) == DISEASED
        p = np.asarray(predicted) == DISEASED
        return cls(int(np.sum(a & p)), int(np.sum(a & ~p)), int(np.sum(~a & p)),
                   int(np.sum(~a & ~p)))

    @property
    def total(self):
        return self.tp + self.fn + self.fp + self.tn

    @property
    def accuracy(self):
        return Fraction(self.tp + self.tn, self.total) if self.total else Fraction(0)

    @property
    def false_alarm_rate(self):
        """Share of normal samples classified as diseased."""
        n = self.fp + self.tn
        return Fraction(self.fp, n) if n else Fraction(0)

    @property
    def miss_rate(self):
        """Share of diseased samples classified as normal."""
        n = self.tp + self.fn
        return Fraction(self.fn, n) if n else Fraction(0)

    def matrix(self):
        return [[self.tp, self.fn], [self.fp, self.tn]]

    def to_dict(self):
        return {"matrix": self.matrix(), "rows": ["actual_diseased", "actual_normal"],
                "columns": ["classified_diseased", "classified_normal"],
                "total": self.total,
                "accuracy": round(float(self.accuracy), 4),
                "accuracy_exact": str(self.accuracy),
                "false_alarm_rate": round(float(self.false_alarm_rate), 4),
                "miss_rate": round(float(self.miss_rate), 4)}


# ------------------------------------------------------------ leave-one-out

@dataclass
class LOOResult:
    predictions: list
    targets: list
    fold_indices: list
    skipped: list
    confusion: ConfusionMatrix | None = None
    correlation: float | None = None


def _take(X, idx):
    if isinstance(X, np.ndarray):
        return X[idx]
    return [X[i] for i in idx]


def loo_evaluate(estimator, X, y, task="classification", n_jobs=1):
    """Refit a fresh clone of ``estimator`` on every m-1 subset.

    For classification, folds whose training part holds a single class are
    skipped (a warning reports how many). Regression results carry the
    Pearson correlation of predictions with targets.
    """
    y = np.asarray(y)
    m = len(y)
    if m < 2:
        raise LearningError("leave-one-out needs at least two samples")
    if task not in ("classification", "regression"):
        raise LearningError("task must be 'classification' or 'regression'")

    def fold(i):
        train = np.array([j for j in range(m) if j != i])
        if task == "classification" and len(np.unique(y[train])) < 2:
            return i, None
        model = clone(estimator).fit(_take(X, train), y[train])
        return i, model.predict(_take(X, [i]))[0]

    if n_jobs == 1:
        results = [fold(i) for i in range(m)]
    else:
        results = Parallel(n_jobs=n_jobs, prefer="threads")(delayed(fold)(i) for i in range(m))
    done = [(i, p) for i, p in results if p is not None]
    skipped = [i for i, p in results if p is None]
    if skipped:
        warnings.warn(f"leave-one-out skipped {len(skipped)} single-class fold(s)",
                      RuntimeWarning, stacklevel=2)
    idx = [i for i, _ in done]
    preds = [p for _, p in done]
    out = LOOResult(preds, y[idx].tolist(), idx, skipped)
    if task == "classification":
        out.confusion = ConfusionMatrix.from_labels(y[idx], preds)
    elif len(preds) >= 2:
        try:
            out.correlation = pearson_correlation(preds, y[idx])
        except LearningError:
            out.correlation = None
    return out
