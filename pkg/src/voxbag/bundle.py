"""Model bundle persistence.

Layout::

    b"VXB1" | u64 LE metadata length | metadata JSON (UTF-8)
            | u64 LE blob length     | blob

The metadata's ``tensors`` table lists every array block as name, dtype,
shape, offset and byte count. Blocks tile the blob in order. Declarations
are checked against the blob before any array is built. CNN parameters are
stored as little-endian float32; tree and baseline arrays keep their own
dtypes (int64 indices, float64 thresholds and weights).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .baselines import GaussianNbModel, KnnModel, LinearSvmModel, RandomForestModel, RvflModel
from .cnn.network import NetworkSpec
from .ensemble import BaggingConfig, BaggingModel, DecisionTree, TreeConfig
from .errors import BundleCorruptError, BundleMagicError, BundleVersionError, PersistenceError

MAGIC = b"VXB1"
FORMAT_VERSION = 1
_ALLOWED_DTYPES = {"<f4", "<f8", "<i8"}


@dataclass(eq=False)
class ModelBundle:
    network: Optional[NetworkSpec] = None
    params: dict = field(default_factory=dict)
    classifiers: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def feature_width(self) -> Optional[int]:
        return self.network.feature_width if self.network else None

    def __eq__(self, other):
        if not isinstance(other, ModelBundle):
            return NotImplemented
        return to_bytes(self) == to_bytes(other)


# -- classifier <-> (meta, arrays) ----------------------------------------------------


def _tree_config_dict(cfg: TreeConfig) -> dict:
    return {"max_depth": cfg.max_depth, "min_samples_split": cfg.min_samples_split,
            "min_impurity_decrease": cfg.min_impurity_decrease, "max_features": cfg.max_features}


def _bagging_parts(model: BaggingModel, prefix: str):
    cfg = model.config
    meta = {"n_bags": cfg.n_bags, "seed": cfg.seed, "voting": cfg.voting,
            "class_count": model.class_count, "n_features": model.trees[0].n_features,
            "tree": _tree_config_dict(cfg.tree)}
    arrays = {}
    for i, (tree, bag) in enumerate(zip(model.trees, model.bag_indices)):
        for key, arr in tree.arrays().items():
            arrays[f"{prefix}/tree{i}/{key}"] = arr
        arrays[f"{prefix}/bag{i}"] = np.asarray(bag, dtype=np.int64)
    return meta, arrays


def _bagging_from(meta: dict, arrays: dict, prefix: str) -> BaggingModel:
    tcfg = TreeConfig(**meta["tree"])
    cfg = BaggingConfig(n_bags=meta["n_bags"], tree=tcfg, seed=meta["seed"], voting=meta["voting"])
    trees, bags = [], []
    for i in range(meta["n_bags"]):
        p = f"{prefix}/tree{i}/"
        trees.append(DecisionTree(arrays[p + "feature"], arrays[p + "threshold"], arrays[p + "left"],
                                  arrays[p + "right"], arrays[p + "counts"], meta["n_features"], tcfg))
        bags.append(arrays[f"{prefix}/bag{i}"])
    return BaggingModel(tuple(trees), tuple(bags), cfg, meta["class_count"])


def _classifier_parts(name: str, model):
    prefix = f"clf/{name}"
    if isinstance(model, BaggingModel):
        meta, arrays = _bagging_parts(model, prefix)
        return {"kind": "bagging", **meta}, arrays
    if isinstance(model, RandomForestModel):
        meta, arrays = _bagging_parts(model.bagging, prefix)
        return {"kind": "random_forest", "m_try": model.m_try, **meta}, arrays
    if isinstance(model, KnnModel):
        return {"kind": "knn", "k": model.k}, {f"{prefix}/X": model.X, f"{prefix}/y": model.y}
    if isinstance(model, GaussianNbModel):
        return {"kind": "gnb", "epsilon": model.epsilon}, {
            f"{prefix}/means": model.means, f"{prefix}/variances": model.variances,
            f"{prefix}/priors": model.priors}
    if isinstance(model, RvflModel):
        return {"kind": "rvfl", "ridge": model.ridge}, {
            f"{prefix}/hidden_weights": model.hidden_weights,
            f"{prefix}/hidden_bias": model.hidden_bias, f"{prefix}/beta": model.beta}
    if isinstance(model, LinearSvmModel):
        return {"kind": "svm", "lam": model.lam}, {
            f"{prefix}/weights": model.weights, f"{prefix}/bias": np.array([model.bias]),
            f"{prefix}/objective_trace": np.asarray(model.objective_trace, dtype=np.float64)}
    raise PersistenceError(f"cannot serialize classifier {name!r} of type {type(model).__name__}")


def _classifier_from(name: str, meta: dict, arrays: dict):
    prefix = f"clf/{name}"
    kind = meta["kind"]
    body = {k: v for k, v in meta.items() if k != "kind"}
    if kind == "bagging":
        return _bagging_from(body, arrays, prefix)
    if kind == "random_forest":
        m_try = body.pop("m_try")
        return RandomForestModel(_bagging_from(body, arrays, prefix), m_try)
    if kind == "knn":
        return KnnModel(arrays[f"{prefix}/X"], arrays[f"{prefix}/y"], meta["k"])
    if kind == "gnb":
        return GaussianNbModel(arrays[f"{prefix}/means"], arrays[f"{prefix}/variances"],
                               arrays[f"{prefix}/priors"], meta["epsilon"])
    if kind == "rvfl":
        return RvflModel(arrays[f"{prefix}/hidden_weights"], arrays[f"{prefix}/hidden_bias"],
                         arrays[f"{prefix}/beta"], meta["ridge"])
    if kind == "svm":
        return LinearSvmModel(arrays[f"{prefix}/weights"], float(arrays[f"{prefix}/bias"][0]),
                              meta["lam"], arrays[f"{prefix}/objective_trace"].tolist())
    raise PersistenceError(f"unknown classifier kind {kind!r}")


# -- encoding ------------------------------------------------------------------------------


def _dtype_tag(name: str, arr: np.ndarray) -> str:
    if name.startswith("cnn/"):
        return "<f4"
    if arr.dtype.kind == "f":
        return "<f4" if arr.dtype.itemsize == 4 else "<f8"
    if arr.dtype.kind in "iu":
        return "<i8"
    raise PersistenceError(f"array {name!r} has unsupported dtype {arr.dtype}")


def to_bytes(bundle: ModelBundle) -> bytes:
    # names are sorted so equal bundles encode identically whatever their dict order
    arrays = {f"cnn/{k}": bundle.params[k] for k in sorted(bundle.params)}
    clf_meta = {}
    for name in sorted(bundle.classifiers):
        meta, parts = _classifier_parts(name, bundle.classifiers[name])
        clf_meta[name] = meta
        arrays.update(parts)
    table, blocks, offset = [], [], 0
    for name, arr in arrays.items():
        tag = _dtype_tag(name, arr)
        raw = np.ascontiguousarray(arr, dtype=np.dtype(tag)).tobytes()
        table.append({"name": name, "dtype": tag, "shape": list(np.shape(arr)),
                      "offset": offset, "nbytes": len(raw)})
        blocks.append(raw)
        offset += len(raw)
    meta = {
        "format_version": FORMAT_VERSION,
        "network": bundle.network.to_dict() if bundle.network else None,
        "feature_width": bundle.feature_width,
        "classifiers": clf_meta,
        "meta": bundle.meta,
        "tensors": table,
    }
    meta_raw = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob = b"".join(blocks)
    return MAGIC + struct.pack("<Q", len(meta_raw)) + meta_raw + struct.pack("<Q", len(blob)) + blob


def _validate_table(table, blob_len: int) -> None:
    expected = 0
    for entry in table:
        try:
            name, tag, shape = entry["name"], entry["dtype"], entry["shape"]
            offset, nbytes = entry["offset"], entry["nbytes"]
        except (KeyError, TypeError) as exc:
            raise BundleCorruptError(f"malformed tensor entry {entry!r}") from exc
        if tag not in _ALLOWED_DTYPES:
            raise BundleCorruptError(f"{name}: unsupported dtype {tag!r}")
        if any((not isinstance(s, int)) or s < 0 for s in shape):
            raise BundleCorruptError(f"{name}: bad shape {shape}")
        declared = int(np.prod(shape, dtype=np.int64)) * np.dtype(tag).itemsize
        if declared != nbytes:
            raise BundleCorruptError(f"{name}: shape {shape} needs {declared} bytes, block has {nbytes}")
        if offset != expected or offset + nbytes > blob_len:
            raise BundleCorruptError(f"{name}: block [{offset}, {offset + nbytes}) does not fit the blob")
        expected += nbytes
    if expected != blob_len:
        raise BundleCorruptError(f"blob has {blob_len} bytes but tensors declare {expected}")


def from_bytes(raw: bytes) -> ModelBundle:
    if len(raw) < 4:
        raise BundleCorruptError(f"bundle is {len(raw)} bytes, too short for a header")
    if raw[:4] != MAGIC:
        raise BundleMagicError(f"bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < 12:
        raise BundleCorruptError("bundle truncated inside the metadata length")
    (meta_len,) = struct.unpack_from("<Q", raw, 4)
    if 12 + meta_len + 8 > len(raw):
        raise BundleCorruptError(f"metadata of {meta_len} bytes overruns a {len(raw)}-byte file")
    try:
        meta = json.loads(raw[12:12 + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BundleCorruptError(f"metadata is not valid JSON: {exc}") from exc
    if not isinstance(meta, dict) or "format_version" not in meta:
        raise BundleCorruptError("metadata lacks a format_version")
    if meta["format_version"] != FORMAT_VERSION:
        raise BundleVersionError(f"bundle format {meta['format_version']}, this build reads {FORMAT_VERSION}")
    (blob_len,) = struct.unpack_from("<Q", raw, 12 + meta_len)
    blob_start = 12 + meta_len + 8
    if len(raw) - blob_start != blob_len:
        raise BundleCorruptError(f"blob declares {blob_len} bytes, file holds {len(raw) - blob_start}")
    table = meta.get("tensors", [])
    _validate_table(table, blob_len)

    arrays = {}
    for e in table:
        start = blob_start + e["offset"]
        arr = np.frombuffer(raw, dtype=np.dtype(e["dtype"]), count=int(np.prod(e["shape"], dtype=np.int64)),
                            offset=start).reshape(e["shape"])
        native = np.float32 if e["dtype"] == "<f4" else (np.float64 if e["dtype"] == "<f8" else np.int64)
        arrays[e["name"]] = arr.astype(native)
    network = NetworkSpec.from_dict(meta["network"]) if meta.get("network") else None
    if network is not None and meta.get("feature_width") != network.feature_width:
        raise BundleCorruptError("feature_width does not match the stored network")
    params = {k[4:]: v for k, v in arrays.items() if k.startswith("cnn/")}
    try:
        classifiers = {name: _classifier_from(name, cm, arrays) for name, cm in meta.get("classifiers", {}).items()}
    except KeyError as exc:
        raise BundleCorruptError(f"classifier arrays missing: {exc}") from exc
    return ModelBundle(network, params, classifiers, meta.get("meta", {}))


def save_bundle(bundle: ModelBundle, path) -> None:
    try:
        Path(path).write_bytes(to_bytes(bundle))
    except OSError as exc:
        raise PersistenceError(f"cannot write bundle {path}: {exc}") from exc


def load_bundle(path) -> ModelBundle:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise PersistenceError(f"cannot read bundle {path}: {exc}") from exc
    return from_bytes(raw)
