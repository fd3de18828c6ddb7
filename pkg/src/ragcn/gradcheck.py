"""Canned finite-difference verification suite for every primitive plus the
composite layer and full-backbone cases. Shared by the test suite and the
`gradcheck` CLI verb.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import (
    Tensor, analytic_gradient, finite_diff_check, finite_diff_gradient,
)
from .backbone import (
    backbone_forward, build_partitioned_adjacency, init_backbone, init_layer,
    named_parameters, stgcn_layer,
)
from .backbone import HyperParams
from .skeleton import build_graph

DOUBLE_TOL = 1e-5
SINGLE_TOL = 1e-3


def _single_precision_check(f, x: Tensor, step: float = 1e-2) -> float:
    """Finite-difference check for float32 composites.

    Central differences are taken at two step sizes; coordinates where the
    two estimates disagree are straddling a ReLU kink (or drowned in float32
    rounding), i.e. the difference quotient itself is unreliable there, so
    they are excluded per the nondifferentiable-point policy. A wrong
    backward still fails: both estimates would then agree with each other
    and differ from the analytic gradient.
    """
    analytic = analytic_gradient(f, x).ravel()
    coarse = finite_diff_gradient(f, x, step).ravel()
    fine = finite_diff_gradient(f, x, step / 2).ravel()
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(fine)))
    converged = np.abs(coarse - fine) <= 0.25 * SINGLE_TOL * denom
    if not converged.any():
        return float("inf")
    err = np.abs(analytic - fine) / denom
    return float(err[converged].max())


@dataclass
class CheckResult:
    name: str
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def _sq_loss(t: Tensor) -> Tensor:
    return ad.scale(ad.total_sum(ad.square(t)), 0.5)


def check_linear(rng) -> list[CheckResult]:
    x = Tensor(rng.normal(size=(4, 5)))
    w = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=3), requires_grad=True)
    labels = np.array([0, 2, 1, 2])
    out = []
    out.append(CheckResult("linear/input", finite_diff_check(
        lambda t: ad.softmax_cross_entropy(ad.linear(t, w, b), labels), x),
        DOUBLE_TOL))
    out.append(CheckResult("linear/weight", finite_diff_check(
        lambda t: ad.softmax_cross_entropy(ad.linear(x, t, b), labels), w),
        DOUBLE_TOL))
    out.append(CheckResult("linear/bias", finite_diff_check(
        lambda t: ad.softmax_cross_entropy(ad.linear(x, w, t), labels), b),
        DOUBLE_TOL))
    return out


def check_conv_time(rng) -> list[CheckResult]:
    out = []
    for stride in (1, 2):
        x = Tensor(rng.normal(size=(3, 2, 8, 4)))
        k = Tensor(rng.normal(size=(5, 3, 5)), requires_grad=True)
        out.append(CheckResult(f"conv_time/stride{stride}/input",
                               finite_diff_check(
            lambda t: _sq_loss(ad.conv_time(t, k, stride, 2)), x), DOUBLE_TOL))
        out.append(CheckResult(f"conv_time/stride{stride}/kernel",
                               finite_diff_check(
            lambda t: _sq_loss(ad.conv_time(x, t, stride, 2)), k), DOUBLE_TOL))
    return out


def check_graph_ops(rng) -> list[CheckResult]:
    x = Tensor(rng.normal(size=(4, 2, 6, 5)))
    w = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    adj = (rng.random((5, 5)) < 0.5).astype(np.float64)
    m = Tensor(rng.normal(size=(5, 5)), requires_grad=True)
    b = Tensor(rng.normal(size=4), requires_grad=True)
    return [
        CheckResult("channel_mix/input", finite_diff_check(
            lambda t: _sq_loss(ad.channel_mix(t, w)), x), DOUBLE_TOL),
        CheckResult("channel_mix/weight", finite_diff_check(
            lambda t: _sq_loss(ad.channel_mix(x, t)), w), DOUBLE_TOL),
        CheckResult("joint_mix/input", finite_diff_check(
            lambda t: _sq_loss(ad.joint_mix(t, adj, m)), x), DOUBLE_TOL),
        CheckResult("joint_mix/importance", finite_diff_check(
            lambda t: _sq_loss(ad.joint_mix(x, adj, t)), m), DOUBLE_TOL),
        CheckResult("channel_bias/bias", finite_diff_check(
            lambda t: _sq_loss(ad.channel_bias(x, t)), b), DOUBLE_TOL),
    ]


def check_batch_norm(rng) -> list[CheckResult]:
    x = Tensor(rng.normal(size=(2, 3, 4, 2)))
    gamma = Tensor(rng.normal(size=2) + 1.5, requires_grad=True)
    beta = Tensor(rng.normal(size=2), requires_grad=True)

    def run(t, g, b):
        stats = ad.RunningStats.create(2, dtype=np.float64)
        return _sq_loss(ad.batch_norm(t, g, b, stats, "train"))

    return [
        CheckResult("batch_norm/input", finite_diff_check(
            lambda t: run(t, gamma, beta), x, step=1e-5), 1e-4),
        CheckResult("batch_norm/gamma", finite_diff_check(
            lambda t: run(x, t, beta), gamma, step=1e-5), 1e-4),
        CheckResult("batch_norm/beta", finite_diff_check(
            lambda t: run(x, gamma, t), beta, step=1e-5), 1e-4),
    ]


def check_elementwise(rng) -> list[CheckResult]:
    x = Tensor(rng.normal(size=(6, 7)))
    x.data[np.abs(x.data) < 0.05] += 0.2  # keep clear of the ReLU kink
    y = Tensor(rng.normal(size=(6, 7)))
    out = [
        CheckResult("relu/input", finite_diff_check(
            lambda t: _sq_loss(ad.relu(t)), x), DOUBLE_TOL),
        CheckResult("add/input", finite_diff_check(
            lambda t: _sq_loss(ad.add(t, y)), x), DOUBLE_TOL),
        CheckResult("dropout/input", finite_diff_check(
            lambda t: _sq_loss(ad.dropout(t, 0.3, "train", 12345)), x),
            DOUBLE_TOL),
        CheckResult("global_avg_pool/input", finite_diff_check(
            lambda t: _sq_loss(ad.global_avg_pool(t)),
            Tensor(rng.normal(size=(3, 2, 4, 5)))), DOUBLE_TOL),
        CheckResult("softmax_cross_entropy/logits", finite_diff_check(
            lambda t: ad.softmax_cross_entropy(t, 3),
            Tensor(rng.normal(size=6))), DOUBLE_TOL),
        CheckResult("concat/input", finite_diff_check(
            lambda t: _sq_loss(ad.concat([t, y], axis=1)), x), DOUBLE_TOL),
    ]
    return out


def check_composite_layer(rng) -> list[CheckResult]:
    """One full ST-GCN layer in double and single precision."""
    graph = build_graph(5, [(0, 1), (1, 2), (2, 3), (3, 4)], 2)
    adj = build_partitioned_adjacency(graph, 2, 1e-4)
    out = []

    def make(dtype):
        layer = init_layer(3, 4, 5, 3, 5, 2, rng, dtype=dtype)
        x = Tensor(rng.normal(size=(3, 2, 8, 5)).astype(dtype))

        def run(t):
            y = stgcn_layer(t, layer, adj, "train", dropout_p=0.0)
            return ad.scale(ad.total_sum(ad.square(y)), 0.5 / y.data.size)

        def run_fixed_input(t):
            y = stgcn_layer(x, layer, adj, "train", dropout_p=0.0)
            return ad.scale(ad.total_sum(ad.square(y)), 0.5 / y.data.size)

        return layer, x, run, run_fixed_input

    layer, x, run, run_fixed = make(np.float64)
    out.append(CheckResult("stgcn_layer/double/input",
                           finite_diff_check(run, x, step=1e-5), DOUBLE_TOL))
    out.append(CheckResult("stgcn_layer/double/edge_importance",
                           finite_diff_check(run_fixed,
                                             layer.edge_importance[1],
                                             step=1e-5), DOUBLE_TOL))
    layer, x, run, run_fixed = make(np.float32)
    out.append(CheckResult("stgcn_layer/single/input",
                           _single_precision_check(run, x), SINGLE_TOL))
    out.append(CheckResult("stgcn_layer/single/edge_importance",
                           _single_precision_check(run_fixed,
                                                   layer.edge_importance[1]),
                           SINGLE_TOL))
    return out


def _directional_check(f: Callable[[], Tensor], param: Tensor,
                       rng, step: float) -> float:
    """Directional derivative of f along a random unit direction of param."""
    ad.zero_grad([param])
    with ad.Tape() as tape:
        loss = f()
        ad.backward(tape, loss)
    direction = rng.normal(size=param.data.shape).astype(param.data.dtype)
    direction /= np.linalg.norm(direction)
    analytic = float((param.grad * direction).sum())
    base = param.data.copy()
    param.data = base + step * direction
    hi = float(f().data)
    param.data = base - step * direction
    lo = float(f().data)
    param.data = base
    numeric = (hi - lo) / (2 * step)
    return abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))


def check_full_backbone(rng) -> list[CheckResult]:
    """10-layer backbone on a 9 x 16 x 5 input, dropout disabled.

    The float32 analytic input gradient (forward and backward both in single
    precision, rounding included) is compared against finite differences of
    a float64 twin carrying the same parameter values: at depth 10 the f32
    difference quotient itself is noisier than the 1e-3 tolerance, so the
    reference must be measured in double. Parameter tensors are spot-checked
    along random directions on the twin.
    """
    graph = build_graph(5, [(0, 1), (1, 2), (2, 3), (3, 4)], 2)
    hyper = HyperParams()
    adj = build_partitioned_adjacency(graph, hyper.max_distance, hyper.alpha)
    params32 = init_backbone(graph, hyper, num_classes=4,
                             rng=np.random.default_rng(77), dtype=np.float32)
    params64 = init_backbone(graph, hyper, num_classes=4,
                             rng=np.random.default_rng(77), dtype=np.float64)
    for (_, t32), (_, t64) in zip(named_parameters(params32),
                                  named_parameters(params64)):
        t64.data = t32.data.astype(np.float64)
    x32 = Tensor(rng.normal(size=(9, 16, 5)).astype(np.float32))
    x64 = Tensor(x32.data.astype(np.float64))

    def loss32(t):
        _, _, logits = backbone_forward(t, params32, adj, "train",
                                        dropout_p=0.0)
        return ad.softmax_cross_entropy(logits, 1)

    def loss64(t):
        _, _, logits = backbone_forward(t, params64, adj, "train",
                                        dropout_p=0.0)
        return ad.softmax_cross_entropy(logits, 1)

    analytic = analytic_gradient(loss32, x32).ravel()
    coarse = finite_diff_gradient(loss64, x64, 1e-5).ravel()
    fine = finite_diff_gradient(loss64, x64, 5e-6).ravel()
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(fine)))
    converged = np.abs(coarse - fine) <= 0.25 * SINGLE_TOL * denom
    err = np.abs(analytic - fine) / denom
    results = [CheckResult("backbone/single/input",
                           float(err[converged].max()), SINGLE_TOL)]
    named = dict(named_parameters(params64))
    picks = ["layer0.spatial_w0", "layer4.edge_importance1",
             "layer9.temporal_kernel", "head_weight"]
    for name in picks:
        err_d = _directional_check(lambda: loss64(x64), named[name], rng,
                                   step=1e-5)
        results.append(CheckResult(f"backbone/double/{name}", err_d,
                                   SINGLE_TOL))
    return results


def run_suite(seed: int = 1234) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    results += check_linear(rng)
    results += check_conv_time(rng)
    results += check_graph_ops(rng)
    results += check_batch_norm(rng)
    results += check_elementwise(rng)
    results += check_composite_layer(rng)
    results += check_full_backbone(rng)
    return results


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = []
    for r in results:
        flag = "pass" if r.passed else "FAIL"
        lines.append(f"{r.name:<{width}}  {r.max_error:12.3e}  "
                     f"< {r.tolerance:g}  {flag}")
    return "\n".join(lines)
