"""Semi-supervised training loop with deterministic seeding and raw-array checkpoints.

One optimization step forwards the labeled batch part for the supervised
loss and the unlabeled part for the cross-modal consistency loss, then
applies one AdamW update (decoupled weight decay; the decay never enters
the reported loss values).

Checkpoints are a little-endian payload file plus a ``<path>.json``
manifest listing every array (model parameters and buffers, optimizer
moments, RNG state) with name, dtype, shape and byte offset.
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import make_batches
from .errors import CorruptCheckpoint, NonFiniteLoss
from .losses import LossReport, LossWeights, consistency_loss, final_loss, supervised_parts
from .network import DualBranchNet, NetworkConfig

CHECKPOINT_KIND = "dualmodseg-checkpoint"
_DTYPE_TO_CODE = {
    torch.float32: "f32",
    torch.float64: "f64",
    torch.int64: "i64",
    torch.int32: "i32",
    torch.uint8: "u8",
}
_CODE_TO_NP = {
    "f32": np.dtype("<f4"),
    "f64": np.dtype("<f8"),
    "i64": np.dtype("<i8"),
    "i32": np.dtype("<i4"),
    "u8": np.dtype("u1"),
}


@dataclass
class TrainConfig:
    learning_rate: float = 6e-3
    weight_decay: float = 4e-4
    max_steps: int = 1000
    batch_labeled: int = 4
    batch_unlabeled: int = 4
    seed: int = 1234
    eval_every: int = 0  # 0 disables periodic evaluation
    weights: LossWeights = field(default_factory=LossWeights)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        kwargs = dict(d)
        if isinstance(kwargs.get("weights"), dict):
            kwargs["weights"] = LossWeights.from_dict(kwargs["weights"])
        return cls(**kwargs)


@dataclass
class TrainState:
    model: DualBranchNet
    optimizer: torch.optim.AdamW
    step: int
    best_val_dice: float
    net_config: NetworkConfig
    train_config: TrainConfig


def init_state(net_config: NetworkConfig, train_config: TrainConfig) -> TrainState:
    """Seed all torch RNGs and build a fresh model + optimizer."""
    torch.manual_seed(train_config.seed)
    torch.use_deterministic_algorithms(True)
    model = DualBranchNet(net_config)
    optimizer = torch.optim.AdamW(
        model.parameters(),
        lr=train_config.learning_rate,
        weight_decay=train_config.weight_decay,
        betas=(0.9, 0.999),
        eps=1e-8,
    )
    return TrainState(
        model=model,
        optimizer=optimizer,
        step=0,
        best_val_dice=-1.0,
        net_config=net_config,
        train_config=train_config,
    )


def _stack_images(records):
    img_a = torch.from_numpy(np.stack([r.image_a for r in records])).unsqueeze(1)
    img_b = torch.from_numpy(np.stack([r.image_b for r in records])).unsqueeze(1)
    return img_a, img_b


def _stack_labeled(records):
    img_a, img_b = _stack_images(records)
    masks = torch.from_numpy(np.stack([r.mask for r in records]).astype(np.int64))
    return img_a, img_b, masks


def train_step(state: TrainState, batch, config: TrainConfig):
    """One forward/backward/AdamW update; returns the per-term loss report."""
    model = state.model
    model.train()
    w = config.weights

    img_a, img_b, masks = _stack_labeled(batch.labeled)
    pred = model(img_a, img_b)
    parts = supervised_parts(pred, masks, w)

    if batch.unlabeled:
        u_a, u_b = _stack_images(batch.unlabeled)
        pred_u = model(u_a, u_b)
        cons = consistency_loss(pred_u.probs_a, pred_u.probs_b)
    else:
        cons = torch.zeros(())

    terms = {
        "l_ce_a": parts["ce_a"],
        "l_ce_b": parts["ce_b"],
        "l_dice_a": parts["dice_a"],
        "l_dice_b": parts["dice_b"],
        "l_sup_total": parts["sup_total"],
        "l_cons": cons,
    }
    bad = [name for name, t in terms.items() if not torch.isfinite(t)]
    if bad:
        raise NonFiniteLoss(f"non-finite loss terms at step {state.step + 1}: {', '.join(bad)}")
    total = final_loss(parts["sup_total"], cons, w)

    state.optimizer.zero_grad()
    total.backward()
    state.optimizer.step()
    state.step += 1

    return LossReport(
        l_ce_a=terms["l_ce_a"].item(),
        l_ce_b=terms["l_ce_b"].item(),
        l_dice_a=terms["l_dice_a"].item(),
        l_dice_b=terms["l_dice_b"].item(),
        l_sup_total=terms["l_sup_total"].item(),
        l_cons=terms["l_cons"].item(),
        l_final=total.item(),
    )


def fit(split, net_config: NetworkConfig, train_config: TrainConfig, work_dir=None):
    """Run max_steps updates with periodic test-set evaluation and checkpointing.

    Returns (final TrainState, history); history holds one dict per step
    and one per evaluation.  With a work_dir, writes train_log.jsonl plus
    best.ckpt / last.ckpt.
    """
    from .evaluation import evaluate  # deferred: evaluation.run_ablation uses fit

    state = init_state(net_config, train_config)
    history = {"steps": [], "evals": []}
    work_dir = Path(work_dir) if work_dir is not None else None
    log_fh = None
    if work_dir is not None:
        work_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(work_dir / "train_log.jsonl", "w")

    def log(record):
        if log_fh is not None:
            log_fh.write(json.dumps(record) + "\n")

    best_saved = False
    try:
        epoch = 0
        while state.step < train_config.max_steps:
            batches = make_batches(
                split,
                train_config.batch_labeled,
                train_config.batch_unlabeled,
                train_config.seed,
                epoch,
            )
            for batch in batches:
                report = train_step(state, batch, train_config)
                history["steps"].append({"step": state.step, **report.to_dict()})
                log({"event": "step", "step": state.step, **report.to_dict()})

                if train_config.eval_every and state.step % train_config.eval_every == 0:
                    metrics = evaluate(state, split.test)
                    entry = {"step": state.step, "dice": metrics.mean_dice, "sens": metrics.mean_sens}
                    history["evals"].append(entry)
                    log({"event": "eval", **entry})
                    if metrics.mean_dice > state.best_val_dice:
                        state.best_val_dice = metrics.mean_dice
                        if work_dir is not None:
                            save_checkpoint(state, work_dir / "best.ckpt")
                            best_saved = True
                if state.step >= train_config.max_steps:
                    break
            epoch += 1
    finally:
        if log_fh is not None:
            log_fh.close()

    if work_dir is not None:
        save_checkpoint(state, work_dir / "last.ckpt")
        if not best_saved:
            save_checkpoint(state, work_dir / "best.ckpt")
    return state, history


def _checkpoint_arrays(state: TrainState):
    """Ordered (name, numpy array) pairs covering model, optimizer and RNG state."""
    entries = []
    for key, tensor in state.model.state_dict().items():
        entries.append((f"model.{key}", tensor.detach().cpu()))
    param_names = {id(p): name for name, p in state.model.named_parameters()}
    for param, opt_state in state.optimizer.state.items():
        name = param_names[id(param)]
        for key in ("step", "exp_avg", "exp_avg_sq"):
            entries.append((f"optim.{name}.{key}", opt_state[key].detach().cpu()))
    entries.append(("rng_state", torch.get_rng_state()))
    return entries


def save_checkpoint(state: TrainState, path) -> None:
    """Write `<path>` payload + `<path>.json` manifest; bit-exact round-trip."""
    path = Path(path)
    arrays = []
    payload = bytearray()
    for name, tensor in _checkpoint_arrays(state):
        code = _DTYPE_TO_CODE[tensor.dtype]
        arr = np.ascontiguousarray(tensor.numpy()).astype(_CODE_TO_NP[code], copy=False)
        raw = arr.tobytes()
        arrays.append(
            {
                "name": name,
                "dtype": code,
                "shape": list(arr.shape),
                "offset": len(payload),
                "nbytes": len(raw),
            }
        )
        payload.extend(raw)
    manifest = {
        "kind": CHECKPOINT_KIND,
        "version": 1,
        "step": state.step,
        "best_val_dice": state.best_val_dice,
        "net_config": state.net_config.to_dict(),
        "train_config": state.train_config.to_dict(),
        "arrays": arrays,
    }
    path.write_bytes(bytes(payload))
    Path(str(path) + ".json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_checkpoint(path) -> TrainState:
    """Restore a TrainState (parameters, moments, step, RNG) from a checkpoint pair."""
    path = Path(path)
    manifest_path = Path(str(path) + ".json")
    if not manifest_path.exists():
        raise CorruptCheckpoint(f"{manifest_path}: manifest not found")
    if not path.exists():
        raise CorruptCheckpoint(f"{path}: payload not found")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise CorruptCheckpoint(f"{manifest_path}: unreadable manifest ({exc})") from exc
    if manifest.get("kind") != CHECKPOINT_KIND:
        raise CorruptCheckpoint(f"{manifest_path}: not a {CHECKPOINT_KIND} manifest")

    payload = path.read_bytes()
    tensors = {}
    end = 0
    for entry in manifest["arrays"]:
        dtype = _CODE_TO_NP[entry["dtype"]]
        shape = tuple(entry["shape"])
        expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if entry["nbytes"] != expected or entry["offset"] + entry["nbytes"] > len(payload):
            raise CorruptCheckpoint(f"{path}: array {entry['name']} does not fit the payload")
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        tensors[entry["name"]] = torch.from_numpy(np.frombuffer(raw, dtype=dtype).reshape(shape).copy())
        end = max(end, entry["offset"] + entry["nbytes"])
    if end != len(payload):
        raise CorruptCheckpoint(f"{path}: payload has {len(payload) - end} trailing bytes")

    net_config = NetworkConfig.from_dict(manifest["net_config"])
    train_config = TrainConfig.from_dict(manifest["train_config"])
    model = DualBranchNet(net_config)
    model_state = {
        name[len("model.") :]: t for name, t in tensors.items() if name.startswith("model.")
    }
    try:
        model.load_state_dict(model_state, strict=True)
    except RuntimeError as exc:
        raise CorruptCheckpoint(f"{path}: model arrays do not match ({exc})") from exc

    optimizer = torch.optim.AdamW(
        model.parameters(),
        lr=train_config.learning_rate,
        weight_decay=train_config.weight_decay,
        betas=(0.9, 0.999),
        eps=1e-8,
    )
    params = dict(model.named_parameters())
    for name, param in params.items():
        prefix = f"optim.{name}."
        opt_entries = {k[len(prefix) :]: t for k, t in tensors.items() if k.startswith(prefix)}
        if opt_entries:
            optimizer.state[param] = opt_entries

    if "rng_state" in tensors:
        torch.set_rng_state(tensors["rng_state"])
    return TrainState(
        model=model,
        optimizer=optimizer,
        step=int(manifest["step"]),
        best_val_dice=float(manifest["best_val_dice"]),
        net_config=net_config,
        train_config=train_config,
    )
