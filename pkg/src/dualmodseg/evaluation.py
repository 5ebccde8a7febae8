"""Dice/sensitivity metrics, per-patient evaluation and the component ablation runner.

Metrics are pooled per patient: all of a patient's slice predictions and
ground truths are stacked into pseudo-volumes and scored once, then the
per-patient values are averaged unweighted.  Inference fuses the two
branches by averaging their probability maps before the argmax.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import volume_io
from .errors import EmptyTestSet, NonBinary, ShapeMismatch
from .trainer import _stack_images


@dataclass
class MetricReport:
    per_patient: dict  # patient_id -> {"dice": float, "sens": float}
    mean_dice: float
    mean_sens: float
    n_patients: int

    def to_dict(self):
        return {
            "per_patient": self.per_patient,
            "mean_dice": self.mean_dice,
            "mean_sens": self.mean_sens,
            "n_patients": self.n_patients,
        }


@dataclass
class AblationResult:
    rows: list  # [{"enable_mem": bool, "enable_cif": bool, "dice": float, "sens": float}]

    def to_dict(self):
        return {"rows": self.rows}


def _check_masks(pred, gt):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    for name, arr in (("pred", pred), ("gt", gt)):
        values = np.unique(arr)
        if not np.isin(values, (0, 1)).all():
            raise NonBinary(f"{name} mask has values outside {{0, 1}}: {values[:8]}")
    return pred.astype(np.int64), gt.astype(np.int64)


def dice_score(pred, gt) -> float:
    """2|P∩G| / (|P|+|G|); 1.0 when both masks are empty."""
    pred, gt = _check_masks(pred, gt)
    p, g = int(pred.sum()), int(gt.sum())
    if p + g == 0:
        return 1.0
    inter = int((pred & gt).sum())
    return 2.0 * inter / (p + g)


def sensitivity(pred, gt) -> float:
    """TP / (TP + FN); 1.0 when the ground truth is empty."""
    pred, gt = _check_masks(pred, gt)
    positives = int(gt.sum())
    if positives == 0:
        return 1.0
    tp = int((pred & gt).sum())
    return tp / positives


def predict_records(model, records, batch_size=8):
    """Fused binary predictions: argmax of the averaged branch probabilities."""
    model.eval()
    preds = []
    with torch.no_grad():
        for start in range(0, len(records), batch_size):
            chunk = records[start : start + batch_size]
            img_a, img_b = _stack_images(chunk)
            pred = model(img_a, img_b)
            fused = (pred.probs_a + pred.probs_b) / 2.0
            preds.extend(fused.argmax(dim=1).numpy().astype(np.uint8))
    return preds


def aggregate_patient_metrics(records, preds) -> MetricReport:
    """Pool each patient's slices into one dice/sensitivity pair, then average."""
    by_patient = {}
    for rec, pred in zip(records, preds):
        by_patient.setdefault(rec.patient_id, []).append((rec.slice_index, pred, rec.mask))
    per_patient = {}
    for pid in sorted(by_patient):
        slices = sorted(by_patient[pid], key=lambda item: item[0])
        pred_vol = np.stack([p for _, p, _ in slices])
        gt_vol = np.stack([m for _, _, m in slices])
        per_patient[pid] = {
            "dice": dice_score(pred_vol, gt_vol),
            "sens": sensitivity(pred_vol, gt_vol),
        }
    dices = [v["dice"] for v in per_patient.values()]
    senses = [v["sens"] for v in per_patient.values()]
    return MetricReport(
        per_patient=per_patient,
        mean_dice=float(np.mean(dices)),
        mean_sens=float(np.mean(senses)),
        n_patients=len(per_patient),
    )


def evaluate(state, test_records) -> MetricReport:
    """Inference-mode evaluation of a TrainState on records that carry masks."""
    if not test_records:
        raise EmptyTestSet("evaluation needs at least one record")
    preds = predict_records(state.model, test_records)
    return aggregate_patient_metrics(test_records, preds)


def run_ablation(split, net_config, train_config) -> AblationResult:
    """Train the four flag combinations on one split/seed/budget and score each."""
    from dataclasses import replace

    from .trainer import fit

    rows = []
    for enable_mem, enable_cif in [(False, False), (True, False), (False, True), (True, True)]:
        cfg = replace(net_config, enable_mem=enable_mem, enable_cif=enable_cif)
        state, _ = fit(split, cfg, train_config)
        metrics = evaluate(state, split.test)
        rows.append(
            {
                "enable_mem": enable_mem,
                "enable_cif": enable_cif,
                "dice": metrics.mean_dice,
                "sens": metrics.mean_sens,
            }
        )
    return AblationResult(rows=rows)


def predict_patient(state, records, out_dir) -> None:
    """Write `<pid>_<idx>_{pred,gt}.pgm` mask pairs for one patient's records."""
    if not records:
        return
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    preds = predict_records(state.model, records)
    for rec, pred in zip(records, preds):
        base = f"{rec.patient_id}_{rec.slice_index}"
        volume_io.write_mask_pgm(pred, out_dir / f"{base}_pred.pgm")
        volume_io.write_mask_pgm(rec.mask, out_dir / f"{base}_gt.pgm")


def format_metric_table(report: MetricReport) -> str:
    """Aligned per-patient table plus the unweighted means."""
    lines = [f"{'patient':<12} {'Dice':>8} {'Sens':>8}"]
    for pid, vals in report.per_patient.items():
        lines.append(f"{pid:<12} {vals['dice']:>8.4f} {vals['sens']:>8.4f}")
    lines.append(f"{'mean':<12} {report.mean_dice:>8.4f} {report.mean_sens:>8.4f}")
    return "\n".join(lines) + "\n"


def format_ablation_table(result: AblationResult) -> str:
    """Checkmark grid over the two components plus Dice and Sensitivity."""
    lines = [f"{'Baseline':<10}{'MEM':<6}{'CIF':<6}{'Dice':>8} {'Sens':>8}"]
    for row in result.rows:
        mem = "x" if row["enable_mem"] else " "
        cif = "x" if row["enable_cif"] else " "
        lines.append(f"{'x':<10}{mem:<6}{cif:<6}{row['dice']:>8.4f} {row['sens']:>8.4f}")
    return "\n".join(lines) + "\n"
