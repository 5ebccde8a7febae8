import numpy as np
import pytest
import torch

from dualmodseg.data import DatasetSplit, volume_to_records
from dualmodseg.network import NetworkConfig
from dualmodseg.phantom import PhantomSpec, generate_phantom
from dualmodseg.trainer import TrainConfig


@pytest.fixture
def tiny_net_config():
    # smallest legal geometry: 16x16 crop, bottleneck 1x1
    return NetworkConfig(channel_dims=(2, 4, 6, 8, 10), crop=(16, 16), attention_dim=4)


@pytest.fixture
def tiny_train_config():
    return TrainConfig(max_steps=2, batch_labeled=2, batch_unlabeled=2, seed=7, eval_every=0)


@pytest.fixture
def tiny_phantom_spec():
    return PhantomSpec(
        n_patients=5,
        dims=(8, 16, 16),
        lesion_radius_range=(2, 3),
        complementarity=0.8,
        noise_sigma=0.05,
        seed=99,
    )


@pytest.fixture
def tiny_split(tiny_phantom_spec):
    volumes = generate_phantom(tiny_phantom_spec)
    labeled, unlabeled, test = [], [], []
    for i, vol in enumerate(volumes):
        records = volume_to_records(vol, crop=(16, 16), keep_mask=True)
        if i == 0:
            labeled.extend(records)
        elif i < 4:
            for r in records:
                r.mask, r.labeled = None, False
            unlabeled.extend(records)
        else:
            test.extend(records)
    return DatasetSplit(labeled=labeled, unlabeled=unlabeled, test=test, label_fraction=0.25, seed=99)


def finite_difference_gradients(loss_fn, parameters, eps=1e-3):
    """Central-difference gradients; independent of autograd."""
    grads = {}
    for name, param in parameters.items():
        grad = torch.zeros_like(param.data)
        flat, gflat = param.data.view(-1), grad.view(-1)
        for i in range(flat.numel()):
            original = flat[i].item()
            flat[i] = original + eps
            f_plus = loss_fn().item()
            flat[i] = original - eps
            f_minus = loss_fn().item()
            flat[i] = original
            gflat[i] = (f_plus - f_minus) / (2.0 * eps)
        grads[name] = grad
    return grads


def gradient_relative_error(analytic, numeric):
    diff = (analytic - numeric).norm().item()
    return diff / max(analytic.norm().item(), numeric.norm().item(), 1e-12)


def autograd_gradients(loss_fn, parameters):
    for p in parameters.values():
        if p.grad is not None:
            p.grad = None
    loss_fn().backward()
    return {name: p.grad.detach().clone() for name, p in parameters.items()}


def check_module_gradients(module, loss_fn, eps=1e-3, tol=1e-4):
    """Compare autograd vs finite differences for every parameter group."""
    params = dict(module.named_parameters())
    analytic = autograd_gradients(loss_fn, params)
    numeric = finite_difference_gradients(loss_fn, params, eps=eps)
    errors = {name: gradient_relative_error(analytic[name], numeric[name]) for name in params}
    failures = {name: err for name, err in errors.items() if not err < tol}
    assert not failures, f"finite-difference mismatch: {failures}"
    return errors


def make_binary_pair(rng, shape=(8, 8)):
    return rng.integers(0, 2, size=shape).astype(np.uint8), rng.integers(0, 2, size=shape).astype(np.uint8)
