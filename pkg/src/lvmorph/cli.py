"""Command-line interface: one subcommand per pipeline stage.

Exit codes: 0 success, 1 validation error, 2 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__
from .aha import SegmentLabeling, load_landmarks, partition_17, territory_of
from .bof import VisualVocabulary
from .descriptors import (d2_descriptor, read_features_csv, surface_features,
                          write_features_csv, write_features_json)
from .learn import ConfusionMatrix
from .mesh import load_mesh, mesh_report, save_mesh
from .phantom import generate_phantom, load_phantom_spec, phantom_volume
from .study import (ConfigError, PipelineConfig, classify_global, classify_local,
                    load_manifest, regress_local, run_phantom_study, subject_features,
                    subject_si_histogram)
from .volume import read_volume, smooth_mesh, volume_to_mesh, write_volume

PHANTOM_DEFAULTS = {"median_kernel": (3, 3, 1), "iso": 0.5}


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ------------------------------------------------------------------ helpers

def _kernel(text):
    try:
        k = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"kernel must look like 7,7,1, got {text!r}")
    if len(k) != 3:
        raise argparse.ArgumentTypeError(f"kernel needs three sizes, got {text!r}")
    return k


def _counts(text):
    try:
        c = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"confusion must be tp,fn,fp,tn integers, got {text!r}")
    if len(c) != 4:
        raise argparse.ArgumentTypeError("confusion needs four counts: tp,fn,fp,tn")
    return c


def effective_config(args, base=None):
    """Defaults, then the config file, then explicit flags."""
    values = PipelineConfig().to_dict()
    values.update(base or {})
    doc = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise ConfigError(f"{args.config}: config must be a JSON object")
        PipelineConfig.from_dict({**values, **doc})  # rejects unknown keys early
        values.update(doc)
    for name in PipelineConfig.__dataclass_fields__:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    if args.threads is None and "threads" not in doc:
        values["threads"] = os.cpu_count() or 1
    return PipelineConfig.from_dict(values)


def _path(args, path):
    if path is None or os.path.isabs(path) or not args.out_dir:
        return path
    os.makedirs(args.out_dir, exist_ok=True)
    return os.path.join(args.out_dir, path)


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _emit(args, obj, path=None):
    text = _dump(obj)
    path = _path(args, path)
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _labeling(args, mesh):
    if args.labels:
        labeling = SegmentLabeling.from_csv(args.labels)
        if len(labeling.labels) != mesh.n_vertices:
            raise ConfigError(f"{args.labels}: {len(labeling.labels)} labels for a mesh "
                              f"with {mesh.n_vertices} vertices")
        return labeling
    if not args.landmarks:
        raise UsageError("give --landmarks or --labels")
    return partition_17(mesh, load_landmarks(args.landmarks))


def _feature_rows(paths, segment):
    out = []
    for p in paths:
        sets = read_features_csv(p)
        if segment is None:
            parts = [sets[s].features for s in sorted(sets)]
        else:
            if segment not in sets:
                raise ConfigError(f"{p}: no features for segment {segment}")
            parts = [sets[segment].features]
        out.append(np.vstack(parts) if parts else np.zeros((0, 23)))
    return out


# -------------------------------------------------------------- subcommands

def cmd_volume_to_mesh(args):
    cfg = effective_config(args)
    if cfg.iso is None:
        raise UsageError("volume-to-mesh needs --iso (or 'iso' in the config file)")
    mesh = volume_to_mesh(read_volume(args.volume, args.sidecar), cfg.iso, cfg.median_kernel,
                          cfg.normal_iterations, cfg.vertex_iterations)
    save_mesh(mesh, _path(args, args.out))
    _emit(args, {"command": "volume-to-mesh", "mesh": mesh_report(mesh).to_dict(),
                 "config": cfg.to_dict()})


def cmd_smooth(args):
    cfg = effective_config(args)
    mesh = smooth_mesh(load_mesh(args.mesh), cfg.normal_iterations, cfg.vertex_iterations)
    save_mesh(mesh, _path(args, args.out))
    _emit(args, {"command": "smooth", "mesh": mesh_report(mesh).to_dict(),
                 "config": cfg.to_dict()})


def cmd_partition(args):
    mesh = load_mesh(args.mesh)
    labeling = partition_17(mesh, load_landmarks(args.landmarks))
    labeling.to_csv(_path(args, args.out))
    counts = [{"segment": s, "artery": territory_of(s),
               "vertices": int(len(labeling.vertices_of(s)))} for s in range(1, 18)]
    _emit(args, {"command": "partition", "segments": counts})


def cmd_features(args):
    cfg = effective_config(args)
    mesh = load_mesh(args.mesh)
    sets = surface_features(mesh, _labeling(args, mesh), cfg.feature_params)
    out = _path(args, args.out)
    if out.lower().endswith(".json"):
        write_features_json(list(sets.values()), out)
    else:
        write_features_csv(list(sets.values()), out)
    _emit(args, {"command": "features", "config": cfg.to_dict(),
                 "segments": [{"segment": s, "artery": territory_of(s),
                               "points": int(len(fs.vertex_ids)), "skipped": fs.n_skipped}
                              for s, fs in sets.items()]})


def cmd_d2(args):
    cfg = effective_config(args)
    h = d2_descriptor(load_mesh(args.mesh), args.pairs, args.bins, cfg.seed)
    _emit(args, {"command": "d2", "seed": cfg.seed, "pairs": args.pairs,
                 "mean_distance": h.mean_distance, "edges": h.edges.tolist(),
                 "frequencies": h.frequencies.tolist()}, args.out)


def cmd_vocab(args):
    cfg = effective_config(args)
    train = np.vstack(_feature_rows(args.features, args.segment))
    vocab = VisualVocabulary(cfg.n_words, cfg.kmeans_max_iter, random_state=cfg.seed,
                             n_jobs=cfg.threads).fit(train)
    _emit(args, vocab.to_dict(), args.out)


def cmd_histogram(args):
    vocab = VisualVocabulary.load(args.vocab)
    rows = [vocab.histogram(x) for x in _feature_rows(args.features, args.segment)]
    with open(_path(args, args.out), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"word_{j:02d}" for j in range(vocab.n_words)])
        for r in rows:
            w.writerow([repr(float(v)) for v in r])


def _manifest_inputs(args, cfg):
    subjects = load_manifest(args.manifest)
    return subjects, [subject_features(s, cfg) for s in subjects]


def cmd_classify_global(args):
    cfg = effective_config(args)
    subjects = load_manifest(args.manifest)
    labels = [s.global_label(cfg.ds_threshold) for s in subjects]
    if args.descriptor == "si-histogram":
        X = [subject_si_histogram(s, cfg) for s in subjects]
        report = classify_global(X, labels, cfg, descriptor="vector")
        report["descriptor"] = "si-histogram"
    else:
        report = classify_global([subject_features(s, cfg) for s in subjects], labels, cfg)
    report["subjects"] = [s.id for s in subjects]
    report["config"] = cfg.to_dict()
    _emit(args, report, args.out)


def _segment_csv(args, rows, metric):
    if not args.csv:
        return
    with open(_path(args, args.csv), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["segment_id", "artery", "n", metric])
        for r in rows:
            value = r.get(metric)
            w.writerow([r["segment"], r["artery"], r["n"], "" if value is None else value])


def cmd_classify_local(args):
    cfg = effective_config(args)
    subjects, feats = _manifest_inputs(args, cfg)
    report = classify_local(feats, subjects, cfg)
    report["config"] = cfg.to_dict()
    _emit(args, report, args.out)
    _segment_csv(args, report["segments"], "accuracy")


def cmd_regress_local(args):
    cfg = effective_config(args)
    subjects, feats = _manifest_inputs(args, cfg)
    report = regress_local(feats, subjects, cfg)
    report["config"] = cfg.to_dict()
    _emit(args, report, args.out)
    _segment_csv(args, report["segments"], "correlation")


def cmd_phantom(args):
    cfg = effective_config(args, PHANTOM_DEFAULTS)
    if args.study:
        report = run_phantom_study(cfg, args.n_per_class, args.spacing, args.noise)
        _emit(args, report, args.out)
        return
    if not args.spec or not args.out:
        raise UsageError("phantom needs --spec and --out (or --study)")
    spec = load_phantom_spec(args.spec)
    mesh = generate_phantom(spec)
    save_mesh(mesh, _path(args, args.out))
    summary = {"command": "phantom", "spec": spec.to_dict(), "mesh": mesh_report(mesh).to_dict()}
    if args.volume:
        vol = phantom_volume(spec, spacing=args.spacing, noise=args.noise, noise_seed=cfg.seed)
        write_volume(vol, _path(args, args.volume), "float32")
        summary["volume"] = {"dims": list(vol.dims), "spacing": list(vol.spacing),
                             "origin": list(vol.origin), "iso": 0.5}
    _emit(args, summary)


def cmd_report(args):
    cm = ConfusionMatrix.from_counts(args.confusion)
    _emit(args, {"command": "report", "confusion": cm.to_dict()}, args.out)


# ------------------------------------------------------------------- parser

def _common(p, fields=()):
    p.add_argument("--seed", type=int, help="seed for every random choice")
    p.add_argument("--threads", type=int, help="worker threads (default: all cores)")
    p.add_argument("--out-dir", help="directory for relative output paths")
    p.add_argument("--config", help="JSON file with pipeline settings")
    spec = {
        "iso": dict(type=float, help="isosurface level"),
        "median_kernel": dict(flags=["--kernel"], type=_kernel,
                              help="median kernel kx,ky,kz (odd sizes)"),
        "normal_iterations": dict(type=int, help="normal-smoothing iterations"),
        "vertex_iterations": dict(type=int, help="vertex-update iterations"),
        "n_samples": dict(type=int, help="sampled points per segment"),
        "gcd_bins": dict(type=int, help="geodesic histogram bins"),
        "ring_depth": dict(type=int, help="neighbour rings for curvature fits"),
        "n_words": dict(flags=["--words"], type=int, help="vocabulary size"),
        "kmeans_max_iter": dict(type=int, help="k-means iteration cap"),
        "vocabulary_scope": dict(choices=["global", "segment"], help="vocabulary training set"),
        "classifier": dict(flags=["--method"], choices=["lda-knn", "mlp"], help="classifier"),
        "knn_k": dict(flags=["--k"], type=int, help="neighbours for k-NN (odd)"),
        "lda_ridge_scale": dict(type=float, help="LDA ridge relative to trace(S_w)/d"),
        "mlp_hidden": dict(flags=["--hidden"], type=int, help="hidden units"),
        "mlp_epochs": dict(flags=["--epochs"], type=int, help="training epochs"),
        "learning_rate": dict(type=float, help="gradient-descent step"),
        "ridge": dict(type=float, help="ridge penalty for regression"),
        "regression_inputs": dict(flags=["--inputs"], choices=["segment", "territory"],
                                  help="histograms used as regressors"),
        "ds_threshold": dict(type=float, help="percent DS counted as diseased"),
    }
    for name in fields:
        opts = dict(spec[name])
        flags = opts.pop("flags", ["--" + name.replace("_", "-")])
        p.add_argument(*flags, dest=name, **opts)


def build_parser():
    parser = _Parser(prog="lvmorph", description="LV endocardial surface morphology pipeline")
    parser.add_argument("--version", action="version", version=f"lvmorph {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    smoothing = ("normal_iterations", "vertex_iterations")
    feats = ("n_samples", "gcd_bins", "ring_depth")
    learn = ("n_words", "kmeans_max_iter", "vocabulary_scope", "classifier", "knn_k",
             "lda_ridge_scale", "mlp_hidden", "mlp_epochs", "learning_rate", "ds_threshold")

    p = sub.add_parser("volume-to-mesh", help="median filter, isosurface and smoothing")
    _common(p, ("iso", "median_kernel") + smoothing)
    p.add_argument("--volume", required=True, help="raw voxel file")
    p.add_argument("--sidecar", help="JSON header (default: <volume>.json)")
    p.add_argument("--out", required=True, help="output mesh (.off/.ply/.obj)")
    p.set_defaults(func=cmd_volume_to_mesh)

    p = sub.add_parser("smooth", help="two-stage mesh smoothing")
    _common(p, smoothing)
    p.add_argument("--mesh", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_smooth)

    p = sub.add_parser("partition", help="17-segment labeling from landmarks")
    _common(p)
    p.add_argument("--mesh", required=True)
    p.add_argument("--landmarks", required=True, help="landmark JSON")
    p.add_argument("--out", required=True, help="labels CSV")
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("features", help="23-component point features per segment")
    _common(p, feats)
    p.add_argument("--mesh", required=True)
    p.add_argument("--landmarks", help="landmark JSON")
    p.add_argument("--labels", help="labels CSV from the partition command")
    p.add_argument("--out", required=True, help="feature CSV (or .json)")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("d2", help="D2 shape distribution")
    _common(p)
    p.add_argument("--mesh", required=True)
    p.add_argument("--pairs", type=int, default=10000)
    p.add_argument("--bins", type=int, default=64)
    p.add_argument("--out", help="JSON output (default: stdout)")
    p.set_defaults(func=cmd_d2)

    p = sub.add_parser("vocab", help="learn a visual vocabulary")
    _common(p, ("n_words", "kmeans_max_iter"))
    p.add_argument("--features", nargs="+", required=True, help="feature CSVs")
    p.add_argument("--segment", type=int, help="train on one segment only")
    p.add_argument("--out", required=True, help="vocabulary JSON")
    p.set_defaults(func=cmd_vocab)

    p = sub.add_parser("histogram", help="BoF histogram per surface")
    _common(p)
    p.add_argument("--features", nargs="+", required=True, help="feature CSVs")
    p.add_argument("--vocab", required=True, help="vocabulary JSON")
    p.add_argument("--segment", type=int, help="histogram of one segment")
    p.add_argument("--out", required=True, help="CSV, one row per surface")
    p.set_defaults(func=cmd_histogram)

    p = sub.add_parser("classify-global", help="whole-surface leave-one-out classification")
    _common(p, feats + learn)
    p.add_argument("--manifest", required=True)
    p.add_argument("--descriptor", choices=["bof", "si-histogram"], default="bof")
    p.add_argument("--out", help="JSON report (default: stdout)")
    p.set_defaults(func=cmd_classify_global)

    p = sub.add_parser("classify-local", help="per-segment leave-one-out classification")
    _common(p, feats + learn)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out")
    p.add_argument("--csv", help="per-segment accuracy table")
    p.set_defaults(func=cmd_classify_local)

    p = sub.add_parser("regress-local", help="per-segment stenosis regression")
    _common(p, feats + ("n_words", "kmeans_max_iter", "vocabulary_scope", "ridge",
                        "regression_inputs"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--out")
    p.add_argument("--csv", help="per-segment correlation table")
    p.set_defaults(func=cmd_regress_local)

    p = sub.add_parser("phantom", help="synthetic phantom mesh/volume, or the phantom study")
    _common(p, ("iso", "median_kernel") + smoothing + feats + learn)
    p.add_argument("--spec", help="phantom spec JSON")
    p.add_argument("--out", help="mesh path, or the report path with --study")
    p.add_argument("--volume", help="also write a raw intensity volume")
    p.add_argument("--spacing", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--study", action="store_true", help="run the two-class phantom study")
    p.add_argument("--n-per-class", type=int, default=10)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("report", help="metrics from confusion counts")
    _common(p)
    p.add_argument("--confusion", type=_counts, required=True, help="tp,fn,fp,tn")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"lvmorph: I/O error: {exc.strerror}: {exc.filename}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"lvmorph: I/O error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"lvmorph: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
