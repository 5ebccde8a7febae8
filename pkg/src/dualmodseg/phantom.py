"""Synthetic dual-modality phantoms with controllable cross-modal complementarity.

Each patient is a smooth random background plus one ellipsoidal lesion.
The lesion's contrast is split spatially along a random direction: a
``complementarity`` fraction of its voxels is visible in only one modality
(half of it in each), the rest in both.  At complementarity 1 the two
modalities see disjoint halves of the lesion, so neither alone suffices.
"""

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import volume_io
from .data import MultiModalVolume
from .errors import InvalidSpec


@dataclass
class PhantomSpec:
    n_patients: int
    dims: tuple  # (D, H, W)
    lesion_radius_range: tuple  # (min, max) semi-axis length in voxels
    complementarity: float  # fraction of lesion visible in only one modality
    noise_sigma: float
    seed: int


def validate_spec(spec: PhantomSpec) -> None:
    if spec.n_patients < 1:
        raise InvalidSpec(f"n_patients must be >= 1, got {spec.n_patients}")
    if len(spec.dims) != 3 or min(spec.dims) < 1:
        raise InvalidSpec(f"dims must be 3 positive ints, got {spec.dims}")
    rmin, rmax = spec.lesion_radius_range
    if not (1.0 <= rmin <= rmax):
        raise InvalidSpec(f"lesion radii must satisfy 1 <= min <= max, got {spec.lesion_radius_range}")
    if any(rmax > (d - 1) / 2 for d in spec.dims):
        raise InvalidSpec(
            f"max radius {rmax} does not fit inside dims {spec.dims}"
        )
    if not (0.0 <= spec.complementarity <= 1.0):
        raise InvalidSpec(f"complementarity must be in [0, 1], got {spec.complementarity}")
    if spec.noise_sigma < 0:
        raise InvalidSpec(f"noise_sigma must be >= 0, got {spec.noise_sigma}")


def _smooth_background(rng, dims):
    """Constant offset plus a few low-frequency cosine waves."""
    grids = np.meshgrid(*[np.arange(d, dtype=np.float64) for d in dims], indexing="ij")
    field = np.full(dims, rng.uniform(0.2, 0.8))
    for _ in range(3):
        freq = rng.uniform(0.5, 2.5, size=3)
        phase = rng.uniform(0, 2 * np.pi, size=3)
        amp = rng.uniform(0.05, 0.2)
        wave = np.ones(dims)
        for g, d, f, p in zip(grids, dims, freq, phase):
            wave = wave * np.cos(2 * np.pi * f * g / d + p)
        field = field + amp * wave
    return field


def phantom_patient(spec: PhantomSpec, index: int):
    """Build one patient; returns (volume, visible_a, visible_b) for inspection."""
    rng = np.random.default_rng([spec.seed, index])
    dims = tuple(spec.dims)
    rmin, rmax = spec.lesion_radius_range

    radii = rng.uniform(rmin, rmax, size=3)
    center = np.array([rng.uniform(r, d - 1 - r) for r, d in zip(radii, dims)])
    grids = np.meshgrid(*[np.arange(d, dtype=np.float64) for d in dims], indexing="ij")
    dist2 = sum(((g - c) / r) ** 2 for g, c, r in zip(grids, center, radii))
    lesion = dist2 <= 1.0

    # split lesion voxels along a random direction into A-only / both / B-only
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    proj = sum((g - c) * u for g, c, u in zip(grids, center, direction))
    s = proj[lesion]
    half = spec.complementarity / 2.0
    q_lo, q_hi = np.quantile(s, [half, 1.0 - half])
    visible_a = lesion & (proj <= q_hi)  # everything except the B-only tail
    visible_b = lesion & (proj >= q_lo)

    amp = max(1.0, 3.0 * spec.noise_sigma)
    vol_a = _smooth_background(rng, dims) + amp * visible_a
    vol_b = _smooth_background(rng, dims) + amp * visible_b
    if spec.noise_sigma > 0:
        vol_a = vol_a + rng.normal(0.0, spec.noise_sigma, size=dims)
        vol_b = vol_b + rng.normal(0.0, spec.noise_sigma, size=dims)

    volume = MultiModalVolume(
        patient_id=f"p{index:03d}",
        modality_a=vol_a.astype(np.float32),
        modality_b=vol_b.astype(np.float32),
        label=lesion.astype(np.uint8),
    )
    return volume, visible_a, visible_b


def generate_phantom(spec: PhantomSpec):
    """Generate n_patients volumes; deterministic for a fixed spec."""
    validate_spec(spec)
    return [phantom_patient(spec, i)[0] for i in range(spec.n_patients)]


def write_phantom_dataset(spec: PhantomSpec, data_dir) -> Path:
    """Write portable volumes plus a phantom.json manifest into data_dir."""
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    volumes = generate_phantom(spec)
    for vol in volumes:
        volume_io.write_portable(vol.modality_a, data_dir / f"{vol.patient_id}_a")
        volume_io.write_portable(vol.modality_b, data_dir / f"{vol.patient_id}_b")
        volume_io.write_portable(vol.label.astype(np.float32), data_dir / f"{vol.patient_id}_label")
    manifest = {"spec": asdict(spec), "patients": [v.patient_id for v in volumes]}
    path = data_dir / "phantom.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path
