"""Gradient verification suites shared by the CLI and the test suite.

Every registered backward rule is exercised against central finite
differences: once per layer op on a small input, and once through the whole
network.  Inputs are constructed to stay away from relu kinks and pooling
ties, where one-sided sensitivity would make the finite-difference oracle
invalid.

Two composite passes are run.  In eval mode every learnable, conv biases
included, moves the loss, so all of them are difference-checked.  In train
mode a conv bias feeding batch norm has an exactly zero gradient (the batch
mean absorbs any per-channel constant); differences of two equal losses are
pure rounding noise there, so train mode difference-checks everything else
and instead asserts those bias gradients vanish.
"""

from __future__ import annotations

import numpy as np

from . import kernels as K
from . import model as M
from .autograd import GradcheckEntry, GradcheckReport, Tape, gradcheck
from .tensor import Tensor


def _report(name, build, params, tolerance, h=1e-4, **kw):
    return name, gradcheck(build, params, tolerance=tolerance, h=h, **kw)


def _single_op(op_name, param_names, extras=(), **attrs):
    """Builder for one-op tapes: listed params become differentiable leaves,
    extras become fixed leaves appended after them."""
    def build_fn(params):
        tape = Tape()
        nids = {n: tape.leaf(Tensor(params[n])) for n in param_names}
        extra_ids = [tape.leaf(Tensor(e)) for e in extras]
        out = tape.record(op_name, [*nids.values(), *extra_ids], **attrs)
        loss = tape.record("mean", (out,))
        return tape, loss, nids
    return build_fn


def _min_window_gap(x):
    """Smallest top-two gap over all 2x2 pooling windows."""
    n, c, h, w = x.shape
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, h // 2, w // 2, 4)
    top2 = np.sort(win, axis=-1)[..., -2:]
    return float((top2[..., 1] - top2[..., 0]).min())


def layer_reports(tolerance: float = 1e-4) -> list[tuple[str, GradcheckReport]]:
    rng = np.random.default_rng(2024)
    out = []

    # exactly linear: integer inputs and a power-of-two step make the
    # difference quotient exact, so the error must be exactly zero
    x_lin = rng.integers(-4, 5, (2, 3, 4)).astype(np.float64)
    out.append(_report("sum (exact linear)",
                       _single_op("sum", ["x"]), {"x": x_lin},
                       tolerance=0.0, h=0.25))

    a = rng.random((3, 4)) + 0.5
    b = rng.random((3, 4)) + 0.5
    for op in ("add", "sub", "mul"):
        out.append(_report(op, _single_op(op, ["a", "b"]),
                           {"a": a, "b": b}, tolerance))
    out.append(_report("scale", _single_op("scale", ["x"], factor=-1.7),
                       {"x": a}, tolerance))
    out.append(_report("mean", _single_op("mean", ["x"], axes=(0,)),
                       {"x": a}, tolerance))

    x = rng.random((1, 2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3)) * 0.5
    bias = rng.standard_normal(3) * 0.1
    out.append(_report("conv2d 3x3 pad 1",
                       _single_op("conv2d", ["x", "w", "b"], padding=1),
                       {"x": x, "w": w, "b": bias}, 1e-6))
    w1 = rng.standard_normal((3, 2, 1, 1)) * 0.5
    out.append(_report("conv2d 1x1 pad 0",
                       _single_op("conv2d", ["x", "w", "b"], padding=0),
                       {"x": x, "w": w1, "b": bias}, 1e-6))

    xb = rng.standard_normal((2, 3, 4, 4))
    gamma = rng.random(3) + 0.5
    beta = rng.standard_normal(3) * 0.3
    rm = rng.standard_normal(3) * 0.2
    rv = rng.random(3) + 0.5
    common = dict(running_mean=rm, running_var=rv, momentum=0.1, eps=1e-5)
    out.append(_report("batchnorm2d train",
                       _single_op("batchnorm2d", ["x", "gamma", "beta"],
                                  mode="train", **common),
                       {"x": xb, "gamma": gamma, "beta": beta}, tolerance))
    out.append(_report("batchnorm2d eval",
                       _single_op("batchnorm2d", ["x", "gamma", "beta"],
                                  mode="eval", **common),
                       {"x": xb, "gamma": gamma, "beta": beta}, tolerance))

    # relu: inputs bounded away from the kink by much more than h
    xr = rng.standard_normal((1, 4, 6, 6))
    xr = np.where(np.abs(xr) < 0.05, 0.05 + np.abs(xr), xr)
    out.append(_report("relu", _single_op("relu", ["x"]), {"x": xr}, 1e-6))

    # distinct spaced values in random order: window gaps are >= 0.013
    xp = (rng.permutation(3 * 8 * 8).reshape(1, 3, 8, 8) * 0.013)
    assert _min_window_gap(xp) > 1e-3, "pooling check input has a near-tie"
    out.append(_report("maxpool2d", _single_op("maxpool2d", ["x"]),
                       {"x": xp}, tolerance))

    pooled, idx = K.maxpool2d_forward(rng.random((1, 2, 8, 8)))
    y = rng.random(pooled.shape) + 0.5
    out.append(_report("maxunpool2d",
                       _single_op("maxunpool2d", ["y"], indices=idx),
                       {"y": y}, tolerance))

    logits = rng.standard_normal((1, 2, 6, 6))
    out.append(_report("softmax_channels",
                       _single_op("softmax_channels", ["x"]),
                       {"x": logits}, tolerance))

    tgt = (rng.random((1, 6, 6)) > 0.6).astype(np.uint8)
    fov = np.ones((1, 6, 6), np.uint8)
    fov[0, 0, 0] = 0
    probs = rng.uniform(0.1, 0.9, (1, 2, 6, 6))
    out.append(_report("weighted_cross_entropy",
                       _single_op("weighted_cross_entropy", ["p"],
                                  target=tgt, weights=(0.6, 5.0), fov=fov),
                       {"p": probs}, tolerance))

    def sm_ce(params):
        tape = Tape()
        nid = tape.leaf(Tensor(params["logits"]))
        p = tape.record("softmax_channels", (nid,))
        loss = tape.record("weighted_cross_entropy", (p,), target=tgt,
                           weights=(0.6, 5.0), fov=fov)
        return tape, loss, {"logits": nid}
    out.append(_report("softmax + cross entropy", sm_ce,
                       {"logits": logits}, tolerance))
    return out


def _composite_inputs(seed):
    rng = np.random.default_rng(seed)
    x = rng.random((1, 3, 16, 16))
    target = (rng.random((1, 16, 16)) > 0.7).astype(np.uint8)
    fov = np.ones((1, 16, 16), np.uint8)
    return x, target, fov


def _composite_build(config, mode, x, target, fov, weights):
    def build_fn(params):
        mp = M.build(config, seed=0, dtype=np.float64)
        for k, a in params.items():
            mp.set_tensor(k, Tensor(a))
        tape = Tape()
        probs, nids = M.forward_on_tape(tape, mp, Tensor(x), mode=mode)
        loss = tape.record("weighted_cross_entropy", (probs,), target=target,
                           weights=weights, fov=fov)
        return tape, loss, nids
    return build_fn


def _is_normalized_bias(name):
    # conv bias absorbed by a following batch norm; head.bias is not
    return name.endswith(".bias") and name != "head.bias"


def composite_report(mode: str = "eval", tolerance: float = 1e-4,
                     seed: int = 9, param_seed: int = 5,
                     max_entries_per_param: int | None = None,
                     config: M.RCNetConfig | None = None) -> GradcheckReport:
    """Difference-checks the whole network on a 1x3x16x16 input.  In train
    mode the mean-absorbed conv biases are checked for vanishing gradients
    instead (see module docstring), and a smaller step is used: batch-stat
    coupling spreads an h-sized perturbation across whole channels, which at
    h=1e-4 can push far-away relu/pool states over their switching points."""
    config = config or M.RCNetConfig()
    base = M.build(config, seed=param_seed, dtype=np.float64)
    arrays = {k: t.data.copy() for k, t in base.named_learnables().items()}
    x, target, fov = _composite_inputs(seed)
    build_fn = _composite_build(config, mode, x, target, fov, (0.6, 5.0))
    if mode == "eval":
        return gradcheck(build_fn, arrays, tolerance=tolerance,
                         max_entries_per_param=max_entries_per_param,
                         seed=seed)
    fd_params = {k: a for k, a in arrays.items()
                 if not _is_normalized_bias(k)}
    report = gradcheck(build_fn, fd_params, tolerance=tolerance, h=1e-5,
                       max_entries_per_param=max_entries_per_param, seed=seed)
    tape, loss, nids = build_fn(arrays)
    grads = tape.backward(loss)
    for name in arrays:
        if not _is_normalized_bias(name):
            continue
        g = np.abs(grads[nids[name]].data).max() if nids[name] in grads \
            else 0.0
        report.entries.append(GradcheckEntry(
            f"{name} (zero by normalization)", g, g < 1e-10))
    return report


def run_all(exhaustive_entries: int | None = 40
            ) -> tuple[list[tuple[str, GradcheckReport]], bool]:
    """Full suite: every layer op, then the composite in both modes.  Pass
    exhaustive_entries=None to difference-check every parameter entry."""
    reports = layer_reports()
    reports.append(("composite (eval mode)", composite_report(
        "eval", max_entries_per_param=exhaustive_entries)))
    reports.append(("composite (train mode)", composite_report(
        "train", max_entries_per_param=exhaustive_entries)))
    return reports, all(r.ok for _, r in reports)
