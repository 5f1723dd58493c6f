"""Visual vocabularies (k-means) and Bag-of-Features histograms."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.sparse import csr_matrix
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

N_WORDS = 20
_CHUNK = 16384


class VocabularyError(ValueError):
    pass


def _nearest_chunk(x, centroids, c_sq):
    approx = x @ centroids.T
    approx *= -2.0
    approx += c_sq
    rows = np.arange(len(x))
    best = np.argmin(approx, axis=1)
    x_sq = np.einsum("ij,ij->i", x, x)
    first = approx[rows, best]
    if centroids.shape[0] > 1:
        approx[rows, best] = np.inf
        gap = approx.min(axis=1) - first
        # near-ties in the expanded form are settled on exact distances
        close = np.flatnonzero(gap <= 1e-9 * (x_sq + c_sq.max()) + 1e-12)
        if len(close):
            sub = x[close]
            exact = np.stack([np.sum((sub - c) ** 2, axis=1) for c in centroids], axis=1)
            best[close] = np.argmin(exact, axis=1)
    diff = x - centroids[best]
    return best, np.einsum("ij,ij->i", diff, diff)


def nearest_centroid(x, centroids, n_jobs=1):
    """Index of and squared distance to the nearest centroid (ties -> lowest)."""
    c_sq = np.einsum("ij,ij->i", centroids, centroids)
    chunks = [x[i:i + _CHUNK] for i in range(0, len(x), _CHUNK)] or [x]

    def work(c):
        return _nearest_chunk(c, centroids, c_sq)

    if n_jobs == 1 or len(chunks) == 1:
        parts = [work(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(work, chunks))
    return (np.concatenate([p[0] for p in parts]).astype(np.int64),
            np.concatenate([p[1] for p in parts]))


def _cluster_sums(x, labels, k):
    n = len(x)
    return np.asarray(csr_matrix((np.ones(n), (labels, np.arange(n))), shape=(k, n)) @ x)


def _kmeans_pp(x, k, rng):
    n = len(x)
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = np.sum((x - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = closest.sum()
        if total > 0:
            j = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            j = min(j, n - 1)
        else:
            j = int(rng.integers(n))
        centers[i] = x[j]
        closest = np.minimum(closest, np.sum((x - centers[i]) ** 2, axis=1))
    return centers


def lloyd(x, k, seed=0, max_iter=300, n_jobs=1):
    """k-means++ seeded Lloyd iterations until the assignment stops changing.

    Returns ``(centroids, labels, inertia_history)``. Empty clusters are
    re-seeded with the point farthest from its current centroid. Raises if
    inertia ever increases.
    """
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(x, k, rng)
    labels = None
    history = []
    for _ in range(max_iter):
        new_labels, d2 = nearest_centroid(x, centroids, n_jobs)
        inertia = float(d2.sum())
        if history and inertia > history[-1] * (1 + 1e-12) + 1e-12:
            raise VocabularyError(
                f"k-means inertia increased: {history[-1]!r} -> {inertia!r}")
        history.append(inertia)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        counts = np.bincount(labels, minlength=k)
        sums = _cluster_sums(x, labels, k)
        for j in np.flatnonzero(counts == 0):
            far = int(np.argmax(d2))
            sums[j] = x[far]
            counts[j] = 1
            counts[labels[far]] -= 1
            sums[labels[far]] -= x[far]
            labels[far] = j
            d2[far] = 0.0
        centroids = sums / counts[:, None]
    return centroids, labels, history


class VisualVocabulary(BaseEstimator, TransformerMixin):
    """k visual words learned from 23-component point features.

    Features are z-scored with training statistics before clustering; the
    statistics are kept and reapplied when quantizing.

    ``transform`` maps feature rows to word indices; :meth:`histogram`
    turns a feature set into normalized word frequencies.
    """

    def __init__(self, n_words=N_WORDS, max_iter=300, standardize=True, random_state=0,
                 n_jobs=1):
        self.n_words = n_words
        self.max_iter = max_iter
        self.standardize = standardize
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if len(X) < self.n_words:
            raise VocabularyError(
                f"need at least {self.n_words} features to learn {self.n_words} words, "
                f"got {len(X)}")
        if self.standardize:
            self.mean_ = X.mean(axis=0)
            scale = X.std(axis=0)
            self.scale_ = np.where(scale > 0, scale, 1.0)
        else:
            self.mean_ = np.zeros(X.shape[1])
            self.scale_ = np.ones(X.shape[1])
        Z = (X - self.mean_) / self.scale_
        if len(np.unique(Z, axis=0)) < self.n_words:
            raise VocabularyError("fewer distinct features than words")
        centroids, labels, history = lloyd(Z, self.n_words, self.random_state,
                                           self.max_iter, self.n_jobs)
        self.cluster_centers_ = centroids
        self.labels_ = labels
        self.inertia_history_ = history
        self.inertia_ = history[-1]
        self.n_iter_ = len(history)
        self.n_features_in_ = X.shape[1]
        return self

    @property
    def centroids(self):
        """Word centroids in the original feature units."""
        check_is_fitted(self, "cluster_centers_")
        return self.cluster_centers_ * self.scale_ + self.mean_

    def _standardized(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise VocabularyError(
                f"features have {X.shape[1]} components, vocabulary expects "
                f"{self.n_features_in_}")
        return (X - self.mean_) / self.scale_

    def predict(self, X):
        return nearest_centroid(self._standardized(X), self.cluster_centers_, self.n_jobs)[0]

    def transform(self, X):
        return self.predict(X)

    def histogram(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or len(X) == 0:
            raise VocabularyError("cannot quantize an empty feature set")
        counts = np.bincount(self.predict(X), minlength=self.n_words)
        return counts / counts.sum()

    def to_dict(self):
        check_is_fitted(self, "cluster_centers_")
        return {"k": int(self.n_words), "seed": self.random_state,
                "standardize": bool(self.standardize),
                "centroids": self.cluster_centers_.tolist(),
                "mean": self.mean_.tolist(), "scale": self.scale_.tolist(),
                "iterations": int(self.n_iter_), "inertia": float(self.inertia_)}

    @classmethod
    def from_dict(cls, d):
        vocab = cls(n_words=int(d["k"]), standardize=d.get("standardize", True),
                    random_state=d.get("seed", 0))
        vocab.cluster_centers_ = np.asarray(d["centroids"], dtype=float)
        vocab.mean_ = np.asarray(d["mean"], dtype=float)
        vocab.scale_ = np.asarray(d["scale"], dtype=float)
        vocab.n_iter_ = int(d.get("iterations", 0))
        vocab.inertia_ = float(d.get("inertia", np.nan))
        vocab.inertia_history_ = []
        vocab.n_features_in_ = vocab.cluster_centers_.shape[1]
        if vocab.cluster_centers_.shape[0] != vocab.n_words:
            raise VocabularyError("centroid count does not match k")
        return vocab

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def build_vocabulary(features, k=N_WORDS, seed=0, max_iter=300, n_jobs=1):
    return VisualVocabulary(k, max_iter=max_iter, random_state=seed, n_jobs=n_jobs).fit(features)


def quantize(features, vocabulary):
    return vocabulary.histogram(features)


def _select(subject, segment):
    """Feature rows of one subject: a 2-D array or a {segment: rows} mapping."""
    if isinstance(subject, dict):
        if segment is None:
            parts = [np.asarray(subject[s]) for s in sorted(subject)]
            return np.vstack(parts) if parts else np.zeros((0, 0))
        return np.asarray(subject.get(segment, np.zeros((0, 0))))
    if segment is not None:
        raise VocabularyError("segment selection needs per-segment feature mappings")
    return np.asarray(subject)


class BagOfFeatures(BaseEstimator, TransformerMixin):
    """Turn per-subject point features into word-frequency histograms.

    ``X`` is a sequence with one entry per subject: either a 2-D feature
    array or a mapping from segment id to feature rows. ``segment=None``
    describes the whole surface. The vocabulary is trained on every
    training feature (``vocabulary_scope="global"``) or only on those of the
    selected segment (``"segment"``).
    """

    def __init__(self, n_words=N_WORDS, segment=None, vocabulary_scope="global",
                 max_iter=300, random_state=0, n_jobs=1):
        self.n_words = n_words
        self.segment = segment
        self.vocabulary_scope = vocabulary_scope
        self.max_iter = max_iter
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _segments(self):
        if isinstance(self.segment, (tuple, list)):
            if not self.segment:
                raise VocabularyError("empty segment tuple")
            return tuple(self.segment)
        return (self.segment,)

    def fit(self, X, y=None):
        if self.vocabulary_scope not in ("global", "segment"):
            raise VocabularyError("vocabulary_scope must be 'global' or 'segment'")
        if self.vocabulary_scope == "segment" and self.segment is not None:
            train = np.vstack([_select(s, seg) for s in X for seg in self._segments()])
        else:
            train = np.vstack([_select(s, None) for s in X])
        self.vocabulary_ = VisualVocabulary(self.n_words, self.max_iter,
                                            random_state=self.random_state,
                                            n_jobs=self.n_jobs).fit(train)
        return self

    def transform(self, X):
        """One histogram per subject; a segment tuple concatenates one
        histogram per listed segment."""
        check_is_fitted(self, "vocabulary_")
        return np.array([np.concatenate([self.vocabulary_.histogram(_select(s, seg))
                                         for seg in self._segments()]) for s in X])
