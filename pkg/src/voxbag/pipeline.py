"""Stage commands behind the CLI.

synth -> train-cnn -> extract -> train-ensemble -> evaluate, plus predict
and cost. Stages communicate only through files: the manifest, the model
bundle, and the feature CSV with its ``.meta.json`` sidecar.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from pathlib import Path
from typing import Optional

import numpy as np

from . import baselines, ensemble, metrics
from .bundle import ModelBundle, load_bundle, save_bundle, to_bytes
from .cnn import cost as cnn_cost
from .cnn.network import extract_features, init_params, network_preset
from .cnn.train import train
from .config import STAGE_BASELINES, STAGE_INIT, STAGE_SPLIT, PipelineConfig
from .errors import ClassAbsentError, DataError, StageMismatchError
from .synth import SynthConfig, write_dataset
from .volume import (
    DatasetManifest,
    Volume,
    extract_axial_slices,
    intensity_normalize,
    read_manifest,
    read_nifti,
    resample_trilinear,
    split_dataset,
)

log = logging.getLogger(__name__)

PIPELINE_VERSION = 1
BUNDLE_NAME = "model.vxb"
FEATURES_NAME = "features.csv"
ENSEMBLE = "Ensemble Bagging"
# report order follows the comparison table
CLASSIFIER_ORDER = ("SVM", "Naive Bayes", "K-Nearest Neighbour", "Random Forest", "Standard RVFL", ENSEMBLE)


# -- inputs ------------------------------------------------------------------------------


def prepare_volume(volume: Volume, config: PipelineConfig) -> np.ndarray:
    """Normalize and resample one scan into network inputs.

    3D mode gives one ``(1, S, S, S)`` sample; 2D mode gives
    ``slices_per_subject`` samples of shape ``(1, 1, S, S)``.
    """
    vol, degenerate = intensity_normalize(volume)
    if degenerate:
        log.warning("constant-intensity volume normalized to zeros")
    s = config.input_size
    vol = resample_trilinear(vol, (s, s, s))
    if config.mode == "3d":
        return vol.data[None, None]
    slices = extract_axial_slices(vol, config.slices_per_subject)
    return np.stack(slices)[:, None, None]


def load_inputs(manifest: DatasetManifest, config: PipelineConfig):
    """Network-ready inputs for every record.

    Returns ``(X, y, subjects)`` with one row per sample; ``subjects[i]``
    is the subject id of sample ``i`` (repeated per slice in 2D mode).
    """
    xs, ys, subjects = [], [], []
    for rec in manifest:
        _, vol = read_nifti(manifest.resolve(rec))
        x = prepare_volume(vol, config)
        xs.append(x)
        ys.extend([rec.label] * len(x))
        subjects.extend([rec.subject_id] * len(x))
    if not xs:
        raise DataError("manifest selects no records")
    return np.concatenate(xs), np.array(ys, dtype=np.int64), subjects


def network_for(config: PipelineConfig):
    s = config.input_size
    shape = (1, s, s, s) if config.mode == "3d" else (1, 1, s, s)
    return network_preset(config.preset, config.mode, shape)


def _cnn_digest(bundle: ModelBundle) -> str:
    cnn_only = ModelBundle(bundle.network, bundle.params, {}, {})
    return hashlib.sha256(to_bytes(cnn_only)).hexdigest()


def _mkdir(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {path}: {exc}") from exc
    return path


def _write(path: Path, text: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(text)


# -- stages ----------------------------------------------------------------------------------


def cmd_synth(synth: SynthConfig, out_dir) -> DatasetManifest:
    return write_dataset(synth, out_dir)


def cmd_train_cnn(config: PipelineConfig, manifest_path, out_dir) -> Path:
    """Split, train the CNN on the training side, write the bundle and trace."""
    out = _mkdir(out_dir)
    manifest = read_manifest(manifest_path)
    train_m, test_m = split_dataset(manifest, config.train_fraction, config.sub_seed(STAGE_SPLIT))
    X, y, _ = load_inputs(train_m, config)
    if len(np.unique(y)) < 2:
        raise ClassAbsentError("training partition lacks a class")
    net = network_for(config)
    params = init_params(net, config.sub_seed(STAGE_INIT))
    params, trace = train(net, params, X, y, config.train_config())
    bundle = ModelBundle(net, params, {}, {
        "pipeline_version": PIPELINE_VERSION,
        "stage": "cnn",
        "config": config.to_dict(),
        "split": {"train": [r.subject_id for r in train_m], "test": [r.subject_id for r in test_m]},
    })
    path = out / BUNDLE_NAME
    save_bundle(bundle, path)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("epoch", "train_loss", "eval_loss", "accuracy"))
    for row in trace:
        w.writerow((row["epoch"], f"{row['train_loss']:.6f}", f"{row['eval_loss']:.6f}", f"{row['accuracy']:.6f}"))
    _write(out / "train_trace.csv", buf.getvalue())
    return path


def _bundle_config(bundle: ModelBundle) -> PipelineConfig:
    meta = bundle.meta
    if meta.get("pipeline_version") != PIPELINE_VERSION or "config" not in meta or bundle.network is None:
        raise StageMismatchError("bundle was not produced by train-cnn of this pipeline version")
    return PipelineConfig.from_dict(meta["config"])


def quantize(features: np.ndarray) -> np.ndarray:
    """Round to the 6 decimals the feature CSV carries."""
    return np.array([[float(f"{v:.6f}") for v in row] for row in features], dtype=np.float64)


def cmd_extract(bundle_path, manifest_path, out_dir) -> Path:
    bundle = load_bundle(bundle_path)
    config = _bundle_config(bundle)
    manifest = read_manifest(manifest_path)
    X, y, subjects = load_inputs(manifest, config)
    feats = extract_features(bundle.network, bundle.params, X)
    out = _mkdir(out_dir)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["subject_id", "label", *(f"f{i}" for i in range(feats.shape[1]))])
    for sid, label, row in zip(subjects, y, feats):
        w.writerow([sid, int(label), *(f"{v:.6f}" for v in row)])
    path = out / FEATURES_NAME
    _write(path, buf.getvalue())
    side = {"pipeline_version": PIPELINE_VERSION, "cnn_digest": _cnn_digest(bundle),
            "feature_width": int(feats.shape[1]), "mode": config.mode}
    _write(path.with_suffix(".meta.json"), json.dumps(side, indent=2, sort_keys=True) + "\n")
    return path


def read_features(path):
    """Parse a feature CSV into ``(subjects, labels, matrix)``."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read features {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["subject_id", "label"] or header[2:] != [f"f{i}" for i in range(len(header) - 2)]:
            raise DataError(f"{path}: header must be subject_id,label,f0..fN")
        subjects, labels, rows = [], [], []
        for row in reader:
            subjects.append(row[0])
            labels.append(int(row[1]))
            rows.append([float(v) for v in row[2:]])
    if not rows:
        raise DataError(f"{path}: no feature rows")
    return subjects, np.array(labels, dtype=np.int64), np.array(rows, dtype=np.float64)


def fit_classifiers(X, y, config: PipelineConfig) -> dict:
    models = {ENSEMBLE: ensemble.fit_bagging(X, y, config.bagging_config())}
    if config.baselines:
        seed = config.sub_seed(STAGE_BASELINES)
        models["SVM"] = baselines.svm_fit(X, y, config.svm_lambda, config.svm_epochs, seed=seed)
        models["Naive Bayes"] = baselines.gnb_fit(X, y)
        models["K-Nearest Neighbour"] = baselines.knn_fit(X, y, min(config.knn_k, len(X)))
        models["Random Forest"] = baselines.rf_fit(X, y, config.n_bags, config.tree_config(), seed=seed,
                                                   m_try=config.rf_m_try)
        models["Standard RVFL"] = baselines.rvfl_fit(X, y, config.rvfl_hidden, config.rvfl_ridge, seed=seed)
    return {name: models[name] for name in CLASSIFIER_ORDER if name in models}


def cmd_train_ensemble(bundle_path, features_path, out_dir) -> Path:
    bundle = load_bundle(bundle_path)
    config = _bundle_config(bundle)
    features_path = Path(features_path)
    try:
        side = json.loads(features_path.with_suffix(".meta.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise StageMismatchError(f"feature sidecar for {features_path} is missing or unreadable: {exc}") from exc
    if side.get("cnn_digest") != _cnn_digest(bundle):
        raise StageMismatchError("features were extracted with a different CNN than this bundle holds")
    subjects, y, X = read_features(features_path)
    train_ids = set(bundle.meta["split"]["train"])
    keep = np.array([s in train_ids for s in subjects])
    if not keep.any():
        raise DataError("no feature rows belong to the training partition")
    Xtr, ytr = X[keep], y[keep]
    if len(np.unique(ytr)) < 2:
        raise ClassAbsentError("training features contain a single class")
    bundle.classifiers = fit_classifiers(Xtr, ytr, config)
    bundle.meta = {**bundle.meta, "stage": "ensemble"}
    path = _mkdir(out_dir) / BUNDLE_NAME
    save_bundle(bundle, path)
    return path


def subject_probabilities(model, feats, subjects):
    """Positive-class probability per subject (mean over that subject's rows)."""
    p = np.atleast_2d(model.predict_proba(feats) if hasattr(model, "predict_proba")
                      else ensemble.predict_proba(model, feats))[:, 1]
    order = list(dict.fromkeys(subjects))
    index = {s: i for i, s in enumerate(order)}
    sums = np.zeros(len(order))
    counts = np.zeros(len(order))
    for s, v in zip(subjects, p):
        sums[index[s]] += v
        counts[index[s]] += 1
    return order, sums / counts


def cmd_evaluate(bundle_path, manifest_path, out_dir) -> dict:
    """Score every classifier on the test partition and write the reports."""
    bundle = load_bundle(bundle_path)
    config = _bundle_config(bundle)
    if not bundle.classifiers:
        raise StageMismatchError("bundle has no classifiers; run train-ensemble first")
    manifest = read_manifest(manifest_path)
    test_m = manifest.subset(bundle.meta["split"]["test"])
    if len(test_m) != len(bundle.meta["split"]["test"]):
        raise StageMismatchError("manifest does not contain every test subject of the bundle's split")
    X, _, subjects = load_inputs(test_m, config)
    feats = quantize(extract_features(bundle.network, bundle.params, X))
    labels_by_subject = {r.subject_id: r.label for r in test_m}
    out = _mkdir(out_dir)
    reports, rocs, cms = [], {}, {}
    names = [n for n in CLASSIFIER_ORDER if n in bundle.classifiers]
    names += sorted(set(bundle.classifiers) - set(names))
    for name in names:
        model = bundle.classifiers[name]
        order, p = subject_probabilities(model, feats, subjects)
        y = np.array([labels_by_subject[s] for s in order])
        pred = (p > 0.5).astype(np.int64)  # tie at 0.5 goes to CN
        cm = metrics.confusion(pred, y)
        reports.append((name, metrics.metrics(cm)))
        rocs[name] = metrics.roc_curve(p, y)
        cms[name] = cm.as_dict()
        slug = name.lower().replace(" ", "_").replace("-", "_")
        _write(out / f"roc_{slug}.csv", metrics.roc_csv(rocs[name]))
    text, js, cs = metrics.render_report(reports, rocs)
    _write(out / "report.txt", text)
    _write(out / "report.json", js)
    _write(out / "report.csv", cs)
    _write(out / "confusion.json", json.dumps(cms, indent=2) + "\n")
    return {"reports": dict(reports), "rocs": rocs, "confusion": cms, "text": text}


def cmd_predict(bundle_path, volume_path, classifier: Optional[str] = None) -> dict:
    bundle = load_bundle(bundle_path)
    config = _bundle_config(bundle)
    name = classifier or ENSEMBLE
    if name not in bundle.classifiers:
        raise StageMismatchError(f"bundle has no classifier {name!r}")
    _, vol = read_nifti(volume_path)
    x = prepare_volume(vol, config)
    feats = quantize(extract_features(bundle.network, bundle.params, x))
    _, p = subject_probabilities(bundle.classifiers[name], feats, ["query"] * len(feats))
    p1 = float(p[0])
    label = 1 if p1 > 0.5 else 0
    return {"classifier": name, "label": "SCZ" if label else "CN", "class": label,
            "probability": p1 if label else 1.0 - p1, "p_scz": p1}


def cmd_cost(params: Optional[cnn_cost.CostParams] = None, config: Optional[PipelineConfig] = None) -> dict:
    """Cost of explicit ``CostParams``, or of the configured network plus ensemble."""
    if params is not None:
        return {"conv": cnn_cost.conv_cost(params), "ensemble": cnn_cost.ensemble_cost(params),
                "total": cnn_cost.conv_cost(params) + cnn_cost.ensemble_cost(params)}
    config = config or PipelineConfig()
    return cnn_cost.network_cost(network_for(config), config.n_bags)
