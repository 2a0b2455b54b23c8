"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import functional as F
from .tensor import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps exact zeros from
    amplifying differencing noise."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def _projected(op, inputs, weights):
    out = op(*inputs)
    if weights is None:
        return out, float(np.sum(out.data))
    return out, float(np.sum(out.data * weights))


def finite_difference_check(op: Callable[..., Tensor], inputs: Sequence[Tensor],
                            eps: float = 1e-5, seed: int = 0) -> float:
    """Max relative error between backprop and central differences.

    Non-scalar outputs are reduced with fixed random weights so every output
    element contributes.  Only inputs with ``requires_grad`` are probed.
    """
    inputs = list(inputs)
    probe = op(*inputs)
    weights = None
    if probe.data.size != 1:
        weights = np.random.default_rng(seed).normal(size=probe.shape)
    for t in inputs:
        t.grad = None
    out = op(*inputs)
    out.backward(np.ones_like(out.data) if weights is None else weights.astype(out.dtype))
    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            plus = _projected(op, inputs, weights)[1]
            flat[i] = orig - eps
            minus = _projected(op, inputs, weights)[1]
            flat[i] = orig
            numeric.reshape(-1)[i] = (plus - minus) / (2 * eps)
        worst = max(worst, float(relative_error(analytic, numeric).max()))
    return worst


def _gates_equal(a, b) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def spot_check(loss_fn: Callable[[], Tensor], params: Sequence[Tensor],
               n_probes: int = 10, eps: float = 1e-5, seed: int = 0,
               floor: float = 1e-8, gate_safe: bool = False) -> tuple[float, list]:
    """Finite-difference check of ``n_probes`` randomly chosen scalar entries
    drawn across ``params``; returns the max relative error and the records.

    With ``gate_safe`` a probe whose +/- perturbation flips any relu gate is
    retried with eps / 10 and eps / 100, and redrawn if it still flips; the
    loss is not differentiable across the flip, so central differences there
    say nothing about the backward pass.
    """
    rng = np.random.default_rng(seed)
    for p in params:
        p.grad = None
    loss_fn().backward()
    records = []
    sizes = np.array([p.data.size for p in params])
    attempts = 0
    while len(records) < n_probes:
        attempts += 1
        if attempts > 20 * n_probes:
            raise RuntimeError("could not find gate-stable probes")
        k = int(rng.integers(len(params)))
        p = params[k]
        i = int(rng.integers(sizes[k]))
        flat = p.data.reshape(-1)
        analytic = 0.0 if p.grad is None else float(p.grad.reshape(-1)[i])
        orig = flat[i]
        numeric = used = None
        for e in ((eps, eps / 10, eps / 100) if gate_safe else (eps,)):
            with F.trace_gates() as g_plus:
                flat[i] = orig + e
                plus = float(loss_fn().data)
            with F.trace_gates() as g_minus:
                flat[i] = orig - e
                minus = float(loss_fn().data)
            flat[i] = orig
            if not gate_safe or _gates_equal(g_plus, g_minus):
                numeric, used = (plus - minus) / (2 * e), e
                break
        if numeric is None:
            continue
        err = float(relative_error(np.array(analytic), np.array(numeric), floor))
        records.append({"param": getattr(p, "name", "") or k, "index": i, "eps": used,
                        "analytic": analytic, "numeric": numeric, "rel_error": err})
    return max(r["rel_error"] for r in records), records
