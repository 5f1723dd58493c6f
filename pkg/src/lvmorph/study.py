"""Experiment orchestration: configs, manifests, the three evaluation
scenarios, and the synthetic phantom cohort."""
from __future__ import annotations

import json
import os
import warnings
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
from sklearn.pipeline import Pipeline

from .aha import N_SEGMENTS, TERRITORIES, Landmarks, load_landmarks, partition_17, territory_of
from .bof import BagOfFeatures
from .descriptors import (FeatureParams, read_features_csv, shape_index_histogram,
                          surface_features)
from .learn import (DISEASED, LABEL_NAMES, NORMAL, LDAKNNClassifier, LinearRegressionMV,
                    MLPBinaryClassifier, binarize_ds, loo_evaluate)
from .mesh import load_mesh
from .phantom import PhantomSpec, phantom_volume
from .volume import volume_to_mesh

ARTERIES = ("LAD", "LCX", "RCA")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    median_kernel: tuple = (7, 7, 1)
    iso: float | None = None
    normal_iterations: int = 10
    vertex_iterations: int = 10
    n_samples: int = 500
    gcd_bins: int = 20
    ring_depth: int = 2
    n_words: int = 20
    kmeans_max_iter: int = 100
    vocabulary_scope: str = "global"
    classifier: str = "lda-knn"
    knn_k: int = 1
    lda_ridge_scale: float = 1e-2
    mlp_hidden: int = 10
    mlp_epochs: int = 2000
    learning_rate: float = 0.3
    ridge: float = 0.0
    regression_inputs: str = "segment"
    ds_threshold: float = 70.0
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "median_kernel", tuple(int(k) for k in self.median_kernel))
        if self.classifier not in ("lda-knn", "mlp"):
            raise ConfigError("classifier must be 'lda-knn' or 'mlp'")
        if self.vocabulary_scope not in ("global", "segment"):
            raise ConfigError("vocabulary_scope must be 'global' or 'segment'")
        if self.regression_inputs not in ("segment", "territory"):
            raise ConfigError("regression_inputs must be 'segment' or 'territory'")
        if self.knn_k < 1 or self.knn_k % 2 == 0:
            raise ConfigError("knn_k must be a positive odd number")
        if self.kmeans_max_iter < 1 or self.lda_ridge_scale <= 0:
            raise ConfigError("kmeans_max_iter and lda_ridge_scale must be positive")
        if self.n_samples < 1 or self.n_words < 1 or self.gcd_bins < 1:
            raise ConfigError("n_samples, n_words and gcd_bins must be positive")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def merged(self, **overrides):
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def to_dict(self):
        d = asdict(self)
        d["median_kernel"] = list(self.median_kernel)
        return d

    @property
    def feature_params(self):
        return FeatureParams(self.n_samples, self.gcd_bins, self.ring_depth, self.seed)


# ------------------------------------------------------------------ subjects

@dataclass
class Subject:
    id: str
    mesh: str | None = None
    landmarks: str | None = None
    ds: dict = field(default_factory=dict)
    label: str | None = None
    features: str | None = None

    def global_label(self, threshold=70.0):
        if self.label is not None:
            if self.label not in ("diseased", "normal"):
                raise ConfigError(f"subject {self.id}: label must be diseased or normal")
            return DISEASED if self.label == "diseased" else NORMAL
        if not self.ds:
            raise ConfigError(f"subject {self.id}: needs a label or percent DS values")
        return max(binarize_ds(v, threshold) for v in self.ds.values())

    def ds_of(self, artery):
        try:
            return float(self.ds[artery])
        except KeyError:
            raise ConfigError(f"subject {self.id}: no percent DS for {artery}") from None


def load_manifest(path):
    """Subjects listed in a JSON manifest; paths resolve against its folder."""
    with open(path) as fh:
        doc = json.load(fh)
    root = os.path.dirname(os.path.abspath(path))
    entries = doc.get("subjects") if isinstance(doc, dict) else None
    if not entries:
        raise ConfigError(f"{path}: manifest needs a non-empty 'subjects' list")
    subjects = []
    for i, e in enumerate(entries):
        if "id" not in e:
            raise ConfigError(f"{path}: subject #{i} lacks an id")
        s = Subject(str(e["id"]), e.get("mesh"), e.get("landmarks"), dict(e.get("ds", {})),
                    e.get("label"), e.get("features"))
        for attr in ("mesh", "landmarks", "features"):
            p = getattr(s, attr)
            if p is not None and not os.path.isabs(p):
                setattr(s, attr, os.path.join(root, p))
        if s.features is None and (s.mesh is None or s.landmarks is None):
            raise ConfigError(f"subject {s.id}: give a feature CSV or mesh + landmarks")
        subjects.append(s)
    return subjects


def subject_features(subject, config):
    """Per-segment point features, read from CSV or computed from the mesh."""
    if subject.features is not None:
        return {s: fs.features for s, fs in read_features_csv(subject.features).items()}
    mesh = load_mesh(subject.mesh)
    labeling = partition_17(mesh, load_landmarks(subject.landmarks))
    sets = surface_features(mesh, labeling, config.feature_params)
    return {s: fs.features for s, fs in sets.items()}


def subject_si_histogram(subject, config):
    if subject.mesh is None or subject.landmarks is None:
        raise ConfigError(f"subject {subject.id}: shape-index histograms need mesh + landmarks")
    mesh = load_mesh(subject.mesh)
    labeling = partition_17(mesh, load_landmarks(subject.landmarks))
    return shape_index_histogram(mesh, labeling, config.gcd_bins,
                                 ring_depth=config.ring_depth).ravel()


# -------------------------------------------------------------- experiments

def make_classifier(config):
    if config.classifier == "lda-knn":
        return LDAKNNClassifier(config.knn_k, config.lda_ridge_scale)
    return MLPBinaryClassifier(config.mlp_hidden, config.mlp_epochs, config.learning_rate,
                               config.seed)


def _bof(config, segment=None):
    return BagOfFeatures(config.n_words, segment, config.vocabulary_scope,
                         config.kmeans_max_iter, random_state=config.seed, n_jobs=config.threads)


def classify_global(features, labels, config, descriptor="bof"):
    """Whole-surface classification under leave-one-out.

    ``features`` holds one entry per subject: a {segment: rows} mapping for
    ``descriptor="bof"``, or a fixed-length vector for ``"vector"``.
    """
    clf = make_classifier(config)
    if descriptor == "bof":
        model = Pipeline([("bof", _bof(config)), ("clf", clf)])
        X = list(features)
    else:
        model = clf
        X = np.asarray(features, dtype=float)
    res = loo_evaluate(model, X, np.asarray(labels), "classification", config.threads)
    return {"scenario": "classify-global", "descriptor": descriptor,
            "method": config.classifier, "confusion": res.confusion.to_dict(),
            "predictions": [LABEL_NAMES[int(p)] for p in res.predictions],
            "held_out": res.fold_indices, "skipped_folds": len(res.skipped)}


def _segment_rows(features, segment):
    return [f for f in features if segment in f and len(f[segment])]


def classify_local(features, subjects, config):
    """Per-segment normal/diseased classification from segment histograms."""
    rows = []
    for seg in range(1, N_SEGMENTS + 1):
        artery = territory_of(seg)
        idx = [i for i, f in enumerate(features) if seg in f and len(f[seg])]
        y = np.array([binarize_ds(subjects[i].ds_of(artery), config.ds_threshold)
                      for i in idx])
        entry = {"segment": seg, "artery": artery, "n": len(idx)}
        if len(idx) < 3 or len(np.unique(y)) < 2:
            entry.update(accuracy=None, note="needs both classes and >= 3 subjects")
        else:
            model = Pipeline([("bof", _bof(config, seg)), ("clf", make_classifier(config))])
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                res = loo_evaluate(model, [features[i] for i in idx], y, "classification",
                                   config.threads)
            entry.update(accuracy=round(float(res.confusion.accuracy), 4),
                         confusion=res.confusion.to_dict(), skipped_folds=len(res.skipped))
        rows.append(entry)
    return {"scenario": "classify-local", "method": config.classifier, "segments": rows}


def regress_local(features, subjects, config):
    """Per-segment regression of percent DS on BoF histograms."""
    rows = []
    for seg in range(1, N_SEGMENTS + 1):
        artery = territory_of(seg)
        if config.regression_inputs == "territory":
            selector = tuple(TERRITORIES[artery])
        else:
            selector = seg
        need = selector if isinstance(selector, tuple) else (selector,)
        idx = [i for i, f in enumerate(features) if all(s in f and len(f[s]) for s in need)]
        y = np.array([subjects[i].ds_of(artery) for i in idx])
        entry = {"segment": seg, "artery": artery, "n": len(idx)}
        if len(idx) < 3 or np.ptp(y) == 0:
            entry.update(correlation=None, note="needs >= 3 subjects with varying DS")
        else:
            model = Pipeline([("bof", _bof(config, selector)),
                              ("reg", LinearRegressionMV(config.ridge))])
            res = loo_evaluate(model, [features[i] for i in idx], y, "regression", config.threads)
            r = res.correlation
            entry.update(correlation=None if r is None else round(r, 4),
                         predictions=[round(float(p), 4) for p in res.predictions])
        rows.append(entry)
    return {"scenario": "regress-local", "inputs": config.regression_inputs, "segments": rows}


# ------------------------------------------------------------ phantom cohort

PHANTOM_RADII = (14.0, 14.0, 28.0)


def phantom_landmarks(radii=PHANTOM_RADII):
    """Apex, base-plane centre and three septal points of a half-ellipsoid."""
    a, b, c = radii
    septal = [[-a * 0.9, 0.0, -0.25 * c], [-a * 0.8, 0.1 * b, -0.5 * c],
              [-a * 0.6, 0.1 * b, -0.75 * c]]
    return Landmarks([0.0, 0.0, -c], [0.0, 0.0, 0.0], septal)


def phantom_cohort(n_per_class=10, seed=0, radii=PHANTOM_RADII):
    """Normal phantoms carry dense, tall, inward bumps (trabeculation);
    diseased ones have few broad, low bumps pushed outward."""
    ss = np.random.SeedSequence(seed)
    seeds = ss.generate_state(2 * n_per_class)
    cohort = []
    for i in range(2 * n_per_class):
        diseased = i % 2 == 1
        if diseased:
            spec = PhantomSpec("half_ellipsoid", radii, bump_count=12, bump_amplitude=1.0,
                               bump_wavelength=14.0, bump_direction="outward",
                               seed=int(seeds[i]))
        else:
            spec = PhantomSpec("half_ellipsoid", radii, bump_count=90, bump_amplitude=1.6,
                               bump_wavelength=6.0, bump_direction="inward",
                               seed=int(seeds[i]))
        cohort.append((f"phantom_{i:02d}", spec, DISEASED if diseased else NORMAL))
    return cohort


def phantom_subject_mesh(spec, config, spacing=1.0, noise=0.05):
    volume = phantom_volume(spec, spacing=spacing, noise=noise)
    return volume_to_mesh(volume, 0.5 if config.iso is None else config.iso,
                          config.median_kernel, config.normal_iterations,
                          config.vertex_iterations)


def run_phantom_study(config=None, n_per_class=10, spacing=1.0, noise=0.05):
    """volume -> mesh -> partition -> features -> BoF -> LOO classification."""
    if config is None:
        config = PipelineConfig(median_kernel=(3, 3, 1), iso=0.5)
    cohort = phantom_cohort(n_per_class, config.seed)
    landmarks = phantom_landmarks(cohort[0][1].radii)
    features, labels, meshes = [], [], []
    for name, spec, label in cohort:
        mesh = phantom_subject_mesh(spec, config, spacing, noise)
        labeling = partition_17(mesh, landmarks)
        sets = surface_features(mesh, labeling, config.feature_params)
        features.append({s: fs.features for s, fs in sets.items()})
        labels.append(label)
        meshes.append({"id": name, "label": LABEL_NAMES[label], "vertices": mesh.n_vertices,
                       "segments_present": len(labeling.present)})
    report = classify_global(features, labels, config)
    report["subjects"] = meshes
    report["config"] = config.to_dict()
    return report
