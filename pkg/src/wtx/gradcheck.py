"""Central finite-difference gradient checking for every layer, both losses,
and the end-to-end miniature training objective.

The checks perturb the arrays in place that the closure reads, so the
closure must reference the original array object. Errors are measured as
|analytic - numeric| / max(|analytic|, |numeric|, floor); the floor keeps
finite-difference noise on near-zero entries from dominating.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import ClassBatchNorm, GroupNorm, InputStandardizer, Linear, ReLU
from .losses import sigmoid_bce, smooth_l1
from .models import (DetectionProxyHead, ModelConfig, SourceWeights,
                     TransferModel, joint_losses)


def numeric_gradient(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of scalar-valued f w.r.t. x, elementwise in place."""
    grad = np.zeros_like(x)
    flat, gflat = x.ravel(), grad.ravel()
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray,
                       floor: float = 1e-3) -> float:
    a, n = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float((np.abs(a - n) / denom).max())


@dataclass
class CheckResult:
    name: str
    seed: int
    error: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.error < self.tol


def _projection_loss(forward, r: np.ndarray):
    return lambda: float(np.sum(forward() * r))


def _check_linear(rng, tol) -> float:
    layer = Linear(8, 5, rng)
    x = rng.standard_normal((4, 8))
    r = rng.standard_normal((4, 5))
    f = _projection_loss(lambda: layer.forward(x), r)

    layer.forward(x)
    dx = layer.backward(r)
    errs = [max_relative_error(dx, numeric_gradient(f, x)),
            max_relative_error(layer.weight.grad, numeric_gradient(f, layer.weight.data)),
            max_relative_error(layer.bias.grad, numeric_gradient(f, layer.bias.data))]
    return max(errs)


def _check_relu(rng, tol) -> float:
    layer = ReLU()
    x = rng.standard_normal((4, 6))
    x += np.sign(x) * 0.05          # keep entries away from the kink at 0
    r = rng.standard_normal(x.shape)
    f = _projection_loss(lambda: layer.forward(x), r)
    layer.forward(x)
    dx = layer.backward(r)
    return max_relative_error(dx, numeric_gradient(f, x))


def _check_standardizer(rng, tol) -> float:
    fitted_on = rng.standard_normal((12, 6)) * rng.uniform(0.5, 3.0, size=6)
    layer = InputStandardizer.fit(fitted_on)
    x = rng.standard_normal((5, 6))
    r = rng.standard_normal(x.shape)
    f = _projection_loss(lambda: layer.forward(x), r)
    layer.forward(x)
    dx = layer.backward(r)
    return max_relative_error(dx, numeric_gradient(f, x))


def _check_groupnorm(rng, tol) -> float:
    layer = GroupNorm(4, 2)
    layer.gamma.data[...] = rng.uniform(0.5, 1.5, size=4)
    layer.beta.data[...] = rng.standard_normal(4)
    x = rng.standard_normal((3, 4))
    r = rng.standard_normal(x.shape)
    f = _projection_loss(lambda: layer.forward(x), r)
    layer.forward(x)
    dx = layer.backward(r)
    errs = [max_relative_error(dx, numeric_gradient(f, x)),
            max_relative_error(layer.gamma.grad, numeric_gradient(f, layer.gamma.data)),
            max_relative_error(layer.beta.grad, numeric_gradient(f, layer.beta.data))]
    return max(errs)


def _check_classbatchnorm(rng, tol) -> float:
    layer = ClassBatchNorm(4)
    layer.gamma.data[...] = rng.uniform(0.5, 1.5, size=4)
    layer.beta.data[...] = rng.standard_normal(4)
    x = rng.standard_normal((5, 4))
    r = rng.standard_normal(x.shape)
    f = _projection_loss(lambda: layer.forward(x), r)
    layer.forward(x)
    dx = layer.backward(r)
    errs = [max_relative_error(dx, numeric_gradient(f, x)),
            max_relative_error(layer.gamma.grad, numeric_gradient(f, layer.gamma.data)),
            max_relative_error(layer.beta.grad, numeric_gradient(f, layer.beta.data))]
    return max(errs)


def _check_smooth_l1(rng, tol) -> float:
    pred = rng.standard_normal((6, 4)) * 1.5
    target = rng.standard_normal((6, 4))
    f = lambda: smooth_l1(pred, target).value
    return max_relative_error(smooth_l1(pred, target).grad, numeric_gradient(f, pred))


def _check_sigmoid_bce(rng, tol) -> float:
    logits = rng.standard_normal((5, 7)) * 2.0
    targets = (rng.random((5, 7)) < 0.5).astype(np.float64)
    f = lambda: sigmoid_bce(logits, targets).value
    return max_relative_error(sigmoid_bce(logits, targets).grad,
                              numeric_gradient(f, logits))


def miniature_setup(seed: int):
    """|C|=6, |S|=3, d=8, hidden=8, G=2, batch=4 joint objective fixture."""
    rng = np.random.default_rng(seed)
    w_c = rng.standard_normal((6, 8))
    source = SourceWeights.create(w_c, [0, 1, 2])
    cfg = ModelConfig(variant="ae_wtn", in_dim=8, hidden_dim=8, out_dim=8, groups=2)
    model = TransferModel(cfg, source, seed)
    head = DetectionProxyHead(n_other=2, d_feat=8)
    head.other_weights.data[...] = 0.1 * rng.standard_normal((2, 8))
    feats = rng.standard_normal((4, 8))
    labels = (rng.random((4, 5)) < 0.4).astype(np.float64)
    return model, head, source, feats, labels


def _check_end_to_end(rng, tol) -> float:
    seed = int(rng.integers(0, 2**31))
    model, head, source, feats, labels = miniature_setup(seed)
    alpha = 20.0

    def f():
        return joint_losses(model, head, source, feats, labels, alpha)[2]

    model.zero_grad()
    head.other_weights.zero_grad()
    joint_losses(model, head, source, feats, labels, alpha, backprop=True)

    err = 0.0
    for p in model.parameters() + [head.other_weights]:
        err = max(err, max_relative_error(p.grad, numeric_gradient(f, p.data)))
    return err


_CHECKS = [
    ("linear", _check_linear, 1e-5),
    ("relu", _check_relu, 1e-5),
    ("standardizer", _check_standardizer, 1e-5),
    ("groupnorm", _check_groupnorm, 1e-5),
    ("classbatchnorm", _check_classbatchnorm, 1e-5),
    ("smooth_l1", _check_smooth_l1, 1e-5),
    ("sigmoid_bce", _check_sigmoid_bce, 1e-5),
    ("end_to_end", _check_end_to_end, 1e-4),
]


def run_gradient_suite(seeds=range(10)) -> list[CheckResult]:
    results = []
    for seed in seeds:
        for name, fn, tol in _CHECKS:
            rng = np.random.default_rng(seed)
            results.append(CheckResult(name=name, seed=seed, error=fn(rng, tol), tol=tol))
    return results
