"""Slice extraction, normalization, patient-level splits and batch assembly.

3D co-registered volume pairs are cut into axial 2D slices, slices without
any foreground in the label are dropped, each image slice is normalized to
zero mean / unit variance and then center-cropped.  Splits are made at the
patient level: 80% of patients train / 20% test, and the labeled subset is
a random fraction of the *training patients*, so no patient contributes
both labeled and unlabeled slices.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import volume_io
from .errors import (
    CropLargerThanImage,
    EmptyLabeledSet,
    EmptySplit,
    MissingLabel,
    TooFewPatients,
)

DEFAULT_CROP = (160, 160)


@dataclass
class MultiModalVolume:
    """One patient's co-registered volumes for two modalities plus optional label."""

    patient_id: str
    modality_a: np.ndarray  # (D, H, W)
    modality_b: np.ndarray  # (D, H, W)
    label: np.ndarray | None = None  # (D, H, W) binary


@dataclass
class SliceRecord:
    """A single 2D training sample built from one axial slice."""

    patient_id: str
    slice_index: int
    image_a: np.ndarray  # (h, w) float32, normalized then cropped
    image_b: np.ndarray
    mask: np.ndarray | None  # (h, w) uint8; None when hidden from training
    labeled: bool


@dataclass
class DatasetSplit:
    labeled: list
    unlabeled: list
    test: list
    label_fraction: float
    seed: int


@dataclass
class Batch:
    labeled: list
    unlabeled: list = field(default_factory=list)


def slice_and_filter(volume: MultiModalVolume):
    """Return (slice_index, image_a, image_b, mask) for every axial slice with a lesion."""
    if volume.label is None:
        raise MissingLabel(f"{volume.patient_id}: slice filtering needs a label volume")
    out = []
    for d in range(volume.label.shape[0]):
        mask = volume.label[d]
        if mask.any():
            out.append((d, volume.modality_a[d], volume.modality_b[d], mask))
    return out


def normalize_slice(image: np.ndarray) -> np.ndarray:
    """Zero-mean / unit-variance normalization (population std); constant slices map to zeros."""
    x = np.asarray(image, dtype=np.float64)
    std = x.std()
    if std < 1e-8:
        return np.zeros_like(x, dtype=np.float32)
    return ((x - x.mean()) / std).astype(np.float32)


def center_crop(image: np.ndarray, size) -> np.ndarray:
    """Centered window of `size`; odd remainders drop the extra row/col from bottom/right."""
    h, w = size
    ih, iw = image.shape[:2]
    if ih < h or iw < w:
        raise CropLargerThanImage(f"crop {size} larger than image {(ih, iw)}")
    top = (ih - h) // 2
    left = (iw - w) // 2
    return image[top : top + h, left : left + w]


def volume_to_records(volume: MultiModalVolume, crop=DEFAULT_CROP, keep_mask=True):
    """Slice, normalize, crop one volume into SliceRecords."""
    records = []
    for d, img_a, img_b, mask in slice_and_filter(volume):
        rec = SliceRecord(
            patient_id=volume.patient_id,
            slice_index=d,
            image_a=center_crop(normalize_slice(img_a), crop),
            image_b=center_crop(normalize_slice(img_b), crop),
            mask=center_crop(mask, crop).astype(np.uint8) if keep_mask else None,
            labeled=keep_mask,
        )
        records.append(rec)
    return records


def make_split(volumes, label_fraction, seed, crop=DEFAULT_CROP) -> DatasetSplit:
    """Patient-level 80/20 train/test split with a seeded labeled-patient subset.

    Deterministic for fixed (volumes, label_fraction, seed); patients are
    sorted by id before shuffling so directory listing order is irrelevant.
    """
    if len(volumes) < 2:
        raise TooFewPatients(f"need >= 2 patients, got {len(volumes)}")
    if not (0.0 < label_fraction <= 1.0):
        raise EmptySplit(f"label_fraction must be in (0, 1], got {label_fraction}")

    rng = np.random.default_rng(seed)
    ordered = sorted(volumes, key=lambda v: v.patient_id)
    perm = rng.permutation(len(ordered))
    shuffled = [ordered[i] for i in perm]

    n_train = int(np.floor(0.8 * len(shuffled)))
    train, test = shuffled[:n_train], shuffled[n_train:]
    n_labeled = int(np.ceil(label_fraction * len(train)))
    labeled_idx = set(rng.choice(len(train), size=n_labeled, replace=False).tolist())

    labeled, unlabeled = [], []
    for i, vol in enumerate(train):
        recs = volume_to_records(vol, crop, keep_mask=(i in labeled_idx))
        (labeled if i in labeled_idx else unlabeled).extend(recs)
    test_records = []
    for vol in test:
        test_records.extend(volume_to_records(vol, crop, keep_mask=True))

    if not labeled:
        raise EmptySplit("labeled set is empty (labeled patients have no lesion slices)")
    if not test_records:
        raise EmptySplit("test set is empty")
    return DatasetSplit(
        labeled=labeled,
        unlabeled=unlabeled,
        test=test_records,
        label_fraction=label_fraction,
        seed=seed,
    )


def _index_stream(n, rng):
    """Endless stream of indices: a fresh permutation per pass."""
    while True:
        yield from rng.permutation(n).tolist()


def make_batches(split: DatasetSplit, batch_labeled, batch_unlabeled, seed, epoch):
    """Deterministic batches for one epoch.

    Epoch length is set by the unlabeled stream (the larger set) or by the
    labeled stream when no unlabeled data exists; the shorter stream cycles
    with reshuffling.  Every batch carries exactly `batch_labeled` labeled
    records and `batch_unlabeled` unlabeled ones (none if the unlabeled set
    is empty).
    """
    if not split.labeled:
        raise EmptyLabeledSet("batch assembly needs labeled records")
    n_lab, n_unl = len(split.labeled), len(split.unlabeled)
    if n_unl > 0:
        n_batches = int(np.ceil(n_unl / batch_unlabeled))
    else:
        n_batches = int(np.ceil(n_lab / batch_labeled))

    lab_stream = _index_stream(n_lab, np.random.default_rng([seed, epoch, 0]))
    unl_stream = _index_stream(n_unl, np.random.default_rng([seed, epoch, 1])) if n_unl else None

    batches = []
    for _ in range(n_batches):
        lab = [split.labeled[next(lab_stream)] for _ in range(batch_labeled)]
        unl = [split.unlabeled[next(unl_stream)] for _ in range(batch_unlabeled)] if unl_stream else []
        batches.append(Batch(labeled=lab, unlabeled=unl))
    return batches


def split_manifest(split: DatasetSplit) -> dict:
    """JSON-ready manifest listing every record's patient/slice/group."""
    def entries(records, group):
        return [
            {"patient_id": r.patient_id, "slice_index": r.slice_index, "labeled": r.labeled, "group": group}
            for r in records
        ]

    return {
        "label_fraction": split.label_fraction,
        "seed": split.seed,
        "records": entries(split.labeled, "labeled")
        + entries(split.unlabeled, "unlabeled")
        + entries(split.test, "test"),
    }


def write_split_manifest(split: DatasetSplit, path) -> None:
    Path(path).write_text(json.dumps(split_manifest(split), indent=2) + "\n")


def load_volumes(data_dir):
    """Load all `<pid>_{a,b,label}` volumes (portable pairs or .nii) from a directory."""
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise FileNotFoundError(f"data directory not found: {data_dir}")
    patients = {}
    for p in sorted(data_dir.glob("*_a.json")):
        patients[p.name[: -len("_a.json")]] = "portable"
    for p in sorted(data_dir.glob("*_a.nii")):
        patients.setdefault(p.name[: -len("_a.nii")], "nifti")

    def load_one(base, kind):
        if kind == "portable":
            return volume_io.read_portable(data_dir / f"{base}.json").voxels
        return volume_io.read_nifti1(data_dir / f"{base}.nii").voxels

    volumes = []
    for pid in sorted(patients):
        kind = patients[pid]
        label_base = data_dir / (f"{pid}_label.json" if kind == "portable" else f"{pid}_label.nii")
        label = None
        if label_base.exists():
            label = load_one(f"{pid}_label", kind).astype(np.uint8)
        volumes.append(
            MultiModalVolume(
                patient_id=pid,
                modality_a=load_one(f"{pid}_a", kind),
                modality_b=load_one(f"{pid}_b", kind),
                label=label,
            )
        )
    return volumes
