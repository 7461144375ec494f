"""Synthetic two-class volumes standing in for real scans.

Every volume is i.i.d. Gaussian noise. Class SCZ additionally has a
spherical Gaussian blob of the configured amplitude subtracted around the
grid centre, a crude stand-in for localized tissue loss.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .volume import CN, SCZ, DatasetManifest, ManifestRecord, Volume, write_manifest, write_nifti


@dataclass(frozen=True)
class SynthConfig:
    per_class: int = 100
    extent: int = 16
    noise_sigma: float = 1.0
    amplitude: float = 2.0
    radius: float = 3.0
    seed: int = 0
    tr_ms: float = 2000.0
    te_ms: float = 30.0
    flip_angle_deg: float = 9.0
    slice_thickness_mm: float = 1.0

    def __post_init__(self):
        if self.per_class < 1 or self.extent < 1:
            raise ConfigError("per_class and extent must be >= 1")
        if self.noise_sigma < 0 or self.amplitude < 0:
            raise ConfigError("noise_sigma and amplitude must be >= 0")
        if not 0 < self.radius <= self.extent / 2:
            raise ConfigError(f"blob radius must lie in (0, extent/2], got {self.radius}")


def blob_profile(extent: int, radius: float) -> np.ndarray:
    """Unit-peak Gaussian centred on the grid centre, std ``radius`` voxels."""
    c = (extent - 1) / 2.0
    g = np.indices((extent,) * 3, dtype=np.float64) - c
    return np.exp(-(g ** 2).sum(axis=0) / (2.0 * radius ** 2))


def generate(config: SynthConfig):
    """Yield ``(subject_id, label, Volume)`` in manifest order (all CN, then all SCZ)."""
    rng = np.random.default_rng(config.seed)
    blob = blob_profile(config.extent, config.radius)
    shape = (config.extent,) * 3
    spacing = (config.slice_thickness_mm, 1.0, 1.0)
    i = 0
    for label in (CN, SCZ):
        for _ in range(config.per_class):
            data = rng.standard_normal(shape) * config.noise_sigma
            if label == SCZ:
                data -= config.amplitude * blob
            yield f"sub-{i:04d}", label, Volume(data.astype(np.float32), spacing)
            i += 1


def write_dataset(config: SynthConfig, out_dir) -> DatasetManifest:
    """Write ``volumes/*.nii`` and ``manifest.csv`` under ``out_dir``."""
    out = Path(out_dir)
    try:
        (out / "volumes").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {out}: {exc}") from exc
    records = []
    for sid, label, vol in generate(config):
        rel = f"volumes/{sid}.nii"
        write_nifti(vol, out / rel)
        records.append(ManifestRecord(sid, rel, label, config.tr_ms, config.te_ms,
                                      config.flip_angle_deg, config.slice_thickness_mm))
    manifest = DatasetManifest(tuple(records), out)
    write_manifest(manifest, out / "manifest.csv")
    return manifest
