import json

import numpy as np
import pytest

from lvmorph.descriptors import FeatureSet, write_features_csv
from lvmorph.learn import DISEASED, NORMAL
from lvmorph.study import (ConfigError, PipelineConfig, Subject, classify_global,
                           classify_local, load_manifest, phantom_cohort, phantom_landmarks,
                           regress_local, subject_features)


def synthetic_features(rng, shift, rows=30):
    """{segment: rows} with a class-dependent offset in the first components."""
    out = {}
    for s in range(1, 18):
        x = rng.normal(0.0, 1.0, (rows, 23))
        x[:, :3] += shift
        out[s] = x
    return out


def write_cohort(tmp_path, rng, n=8):
    """Feature CSVs plus a manifest; odd subjects are diseased on the LAD."""
    entries = []
    for i in range(n):
        sick = i % 2 == 1
        feats = synthetic_features(rng, 2.0 if sick else 0.0)
        path = tmp_path / f"s{i}.csv"
        write_features_csv([FeatureSet(s, np.arange(len(x)), x) for s, x in feats.items()],
                           path)
        entries.append({"id": f"s{i}", "features": path.name,
                        "label": "diseased" if sick else "normal",
                        "ds": {"LAD": 90.0 if sick else 20.0 + i, "LCX": 10.0 + 5 * i,
                               "RCA": 75.0 if i % 4 == 0 else 30.0}})
    manifest = tmp_path / "manifest.json"
    manifest.write_text(json.dumps({"subjects": entries}))
    return manifest


def test_config_defaults_and_validation():
    cfg = PipelineConfig()
    assert (cfg.n_samples, cfg.gcd_bins, cfg.n_words, cfg.ds_threshold) == (500, 20, 20, 70.0)
    assert cfg.learning_rate == 0.3 and cfg.median_kernel == (7, 7, 1)
    with pytest.raises(ConfigError):
        PipelineConfig(classifier="svm")
    with pytest.raises(ConfigError):
        PipelineConfig(knn_k=2)
    with pytest.raises(ConfigError, match="unknown"):
        PipelineConfig.from_dict({"sed": 1})
    assert PipelineConfig().merged(seed=5, knn_k=None).seed == 5


def test_config_round_trip(tmp_path):
    cfg = PipelineConfig(seed=3, median_kernel=(3, 3, 1), classifier="mlp")
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert PipelineConfig.load(path) == cfg


def test_manifest_resolves_paths(tmp_path, rng):
    manifest = write_cohort(tmp_path, rng, 4)
    subjects = load_manifest(manifest)
    assert [s.id for s in subjects] == ["s0", "s1", "s2", "s3"]
    assert subjects[0].features == str(tmp_path / "s0.csv")
    feats = subject_features(subjects[1], PipelineConfig())
    assert sorted(feats) == list(range(1, 18)) and feats[5].shape == (30, 23)


def test_manifest_errors(tmp_path):
    bad = tmp_path / "m.json"
    bad.write_text(json.dumps({"subjects": [{"mesh": "a.off"}]}))
    with pytest.raises(ConfigError, match="id"):
        load_manifest(bad)
    bad.write_text(json.dumps({"subjects": [{"id": "x", "mesh": "a.off"}]}))
    with pytest.raises(ConfigError, match="landmarks"):
        load_manifest(bad)


def test_subject_labels():
    assert Subject("a", label="diseased").global_label() == DISEASED
    assert Subject("a", ds={"LAD": 69.0, "RCA": 12.0}).global_label() == NORMAL
    assert Subject("a", ds={"LAD": 69.0, "RCA": 71.0}).global_label() == DISEASED
    with pytest.raises(ConfigError):
        Subject("a").global_label()
    with pytest.raises(ConfigError):
        Subject("a", ds={"LAD": 1.0}).ds_of("LCX")


def test_classify_global_bof(tmp_path, rng):
    subjects = load_manifest(write_cohort(tmp_path, rng))
    cfg = PipelineConfig(kmeans_max_iter=50)
    feats = [subject_features(s, cfg) for s in subjects]
    labels = [s.global_label() for s in subjects]
    report = classify_global(feats, labels, cfg)
    assert report["confusion"]["total"] == 8
    assert report["confusion"]["accuracy"] == 1.0
    assert len(report["predictions"]) == 8


def test_classify_global_vector(rng):
    X = np.vstack([rng.normal(0, 0.2, (6, 340)), rng.normal(1, 0.2, (6, 340))])
    y = [NORMAL] * 6 + [DISEASED] * 6
    report = classify_global(X, y, PipelineConfig(), descriptor="vector")
    assert report["confusion"]["accuracy"] == 1.0


def test_classify_local_rows(tmp_path, rng):
    subjects = load_manifest(write_cohort(tmp_path, rng))
    cfg = PipelineConfig(kmeans_max_iter=30)
    feats = [subject_features(s, cfg) for s in subjects]
    report = classify_local(feats, subjects, cfg)
    rows = {r["segment"]: r for r in report["segments"]}
    assert sorted(rows) == list(range(1, 18))
    assert rows[7]["artery"] == "LAD" and rows[7]["accuracy"] == 1.0
    # every LCX value is below 70: one class only
    assert rows[5]["accuracy"] is None


@pytest.mark.parametrize("inputs", ["segment", "territory"])
def test_regress_local_rows(tmp_path, rng, inputs):
    subjects = load_manifest(write_cohort(tmp_path, rng))
    cfg = PipelineConfig(kmeans_max_iter=30, regression_inputs=inputs, ridge=1e-3)
    feats = [subject_features(s, cfg) for s in subjects]
    report = regress_local(feats, subjects, cfg)
    rows = report["segments"]
    assert [r["segment"] for r in rows] == list(range(1, 18))
    for r in rows:
        assert r["correlation"] is None or -1.0 <= r["correlation"] <= 1.0
        if r["correlation"] is not None:
            assert len(r["predictions"]) == 8


def test_phantom_cohort_design():
    cohort = phantom_cohort(3, seed=1)
    assert [c[2] for c in cohort] == [NORMAL, DISEASED] * 3
    normal, sick = cohort[0][1], cohort[1][1]
    assert normal.bump_count > sick.bump_count
    assert normal.bump_wavelength < sick.bump_wavelength
    assert sick.bump_direction == "outward"
    assert len({c[1].seed for c in cohort}) == 6
    lm = phantom_landmarks()
    assert lm.apex[2] < lm.base[2]
