"""Gradient verification harness: every differentiable kernel, plus a full
two-hop network, checked against central differences in float64."""

from __future__ import annotations

import numpy as np

from .autodiff import functional as F
from .autodiff.gradcheck import finite_difference_check, spot_check
from .autodiff.tensor import Tensor
from .hopnet.model import ArchConfig, HopPipeline

OP_TOLERANCE = 1e-4
NETWORK_TOLERANCE = 1e-3


def _t(rng, *shape, away_from_zero=False):
    x = rng.normal(size=shape)
    if away_from_zero:
        # keep |x| >= 0.05 so relu-style kinks are never straddled by the probe
        x = np.sign(x) * (np.abs(x) + 0.05)
    return Tensor(x, requires_grad=True)


def _op_cases(rng):
    n_cls = 3
    labels = rng.integers(0, n_cls, size=4)
    mask = (rng.random((3, 5)) < 0.6).astype(float)
    mask[0, 0] = 1.0
    rm, rv = np.zeros(3), np.ones(3)
    target = rng.normal(size=(3, 5))
    return {
        "add": (lambda a, b: F.add(a, b), [_t(rng, 3, 4), _t(rng, 1, 4)]),
        "mul": (lambda a, b: F.mul(a, b), [_t(rng, 3, 4), _t(rng, 3, 1)]),
        "reshape": (lambda a: F.reshape(a, (6, 2)), [_t(rng, 3, 4)]),
        "conv2d": (lambda x, w, b: F.conv2d(x, w, b, stride=1),
                   [_t(rng, 2, 3, 5, 5), _t(rng, 4, 3, 3, 3), _t(rng, 4)]),
        "conv2d_stride2": (lambda x, w: F.conv2d(x, w, None, stride=2),
                           [_t(rng, 2, 3, 6, 6), _t(rng, 2, 3, 3, 3)]),
        "batch_norm_train": (lambda x, g, b: F.batch_norm2d(x, g, b, rm.copy(), rv.copy(), True),
                             [_t(rng, 3, 3, 3, 3), _t(rng, 3), _t(rng, 3)]),
        "batch_norm_eval": (lambda x, g, b: F.batch_norm2d(x, g, b, np.full(3, 0.2),
                                                           np.full(3, 1.5), False),
                            [_t(rng, 2, 3, 3, 3), _t(rng, 3), _t(rng, 3)]),
        "relu": (F.relu, [_t(rng, 4, 5, away_from_zero=True)]),
        "linear": (lambda x, w, b: F.linear(x, w, b), [_t(rng, 3, 5), _t(rng, 4, 5), _t(rng, 4)]),
        "concat_channels": (F.concat_channels, [_t(rng, 2, 2, 3, 3), _t(rng, 2, 3, 3, 3)]),
        "global_avg_pool": (F.global_avg_pool, [_t(rng, 2, 3, 4, 4)]),
        "bilinear_upsample2x": (F.bilinear_upsample2x, [_t(rng, 2, 2, 3, 4)]),
        "softmax_cross_entropy": (lambda z: F.softmax_cross_entropy(z, labels), [_t(rng, 4, n_cls)]),
        "mse_loss": (lambda p: F.mse_loss(p, target), [_t(rng, 3, 5)]),
        "mse_loss_masked": (lambda p: F.mse_loss(p, target, mask), [_t(rng, 3, 5)]),
    }


def op_errors(seed: int) -> dict[str, float]:
    """Max relative gradient error for every op kind, inputs drawn from ``seed``."""
    rng = np.random.default_rng(seed)
    return {name: finite_difference_check(op, inputs, eps=1e-5, seed=seed)
            for name, (op, inputs) in _op_cases(rng).items()}


def network_error(seed: int, n_probes: int = 12, size: int = 64) -> tuple[float, list]:
    """Spot-check ``n_probes`` parameters of a two-hop desk network, train-mode
    batch norm, loss = hop-1 + hop-2 cross-entropy."""
    cfg = ArchConfig(hops=2, input_size=(size, size), seed=seed)
    p = HopPipeline(cfg, dtype=np.float64).train()
    rng = np.random.default_rng(seed + 7919)
    x = Tensor(rng.random((2, 9, size, size)))
    labels = np.array([0, 1])
    saved = {k: v.copy() for k, v in p.named_buffers()}

    def loss_fn():
        l1, l2 = p(x)
        return F.add(F.softmax_cross_entropy(l1, labels), F.softmax_cross_entropy(l2, labels))

    # conv biases ahead of train-mode batch norm have exactly zero gradient;
    # a 1e-6 floor keeps their differencing noise from reading as error
    err, records = spot_check(loss_fn, p.parameters(), n_probes=n_probes, eps=1e-6,
                              seed=seed, floor=1e-6, gate_safe=True)
    for k, v in p.named_buffers():
        v[...] = saved[k]
    return err, records


def run_suite(seeds, with_network: bool = True) -> dict:
    """Aggregate report: worst error per op over all seeds and pass flags."""
    worst: dict[str, float] = {}
    for s in seeds:
        for name, e in op_errors(s).items():
            worst[name] = max(worst.get(name, 0.0), e)
    report = {"seeds": [int(s) for s in seeds], "op_tolerance": OP_TOLERANCE,
              "ops": worst, "ops_pass": all(e < OP_TOLERANCE for e in worst.values())}
    if with_network:
        net = max(network_error(s)[0] for s in seeds)
        report.update(network_tolerance=NETWORK_TOLERANCE, network=net,
                      network_pass=net < NETWORK_TOLERANCE)
    report["passed"] = report["ops_pass"] and report.get("network_pass", True)
    return report
