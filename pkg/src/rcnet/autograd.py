"""Reverse-mode automatic differentiation over tensor operations.

A Tape is a define-by-run record: ops append nodes in execution order, which
is by construction a topological order (an op's inputs must already be on the
tape).  backward() therefore just walks the node list in reverse, applying
each op's registered gradient rule and accumulating into fan-out inputs.

Also home to gradcheck(), the central-finite-difference oracle used to verify
every registered backward rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tensor import Tensor


@dataclass(frozen=True)
class OpDef:
    """Forward plus gradient rule.

    forward(ctx, *inputs, **attrs) -> ndarray; may stash whatever backward
    needs in ctx.  backward(ctx, grad) -> one gradient (or None) per input.
    Backward must not mutate ctx: backward() may be re-run on the same tape.
    """

    forward: Callable
    backward: Callable


OPS: dict[str, OpDef] = {}


def register_op(name: str, forward: Callable, backward: Callable) -> None:
    if name in OPS:
        raise ValueError(f"op {name!r} already registered")
    OPS[name] = OpDef(forward, backward)


@dataclass
class Node:
    op: str | None  # None marks a leaf
    inputs: tuple[int, ...]
    value: Tensor
    ctx: dict = field(default_factory=dict)


class Tape:
    """Ordered operation record for one forward pass."""

    def __init__(self):
        self._nodes: list[Node] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def leaf(self, value) -> int:
        if not isinstance(value, Tensor):
            value = Tensor(value)
        self._nodes.append(Node(None, (), value))
        return len(self._nodes) - 1

    def record(self, op: str, inputs, **attrs) -> int:
        if op not in OPS:
            raise ValueError(f"unknown op {op!r}")
        inputs = tuple(int(i) for i in inputs)
        for i in inputs:
            if i < 0 or i >= len(self._nodes):
                raise ValueError(f"input node {i} is not on the tape")
        ctx: dict = {}
        arrays = [self._nodes[i].value.data for i in inputs]
        out = OPS[op].forward(ctx, *arrays, **attrs)
        self._nodes.append(Node(op, inputs, Tensor(out), ctx))
        return len(self._nodes) - 1

    def value(self, nid: int) -> Tensor:
        return self._nodes[nid].value

    def saved(self, nid: int, key: str):
        """Fetch a value the op's forward stashed (e.g. pool indices)."""
        return self._nodes[nid].ctx[key]

    def backward(self, loss_nid: int) -> dict[int, Tensor]:
        """Gradients of the scalar at loss_nid w.r.t. every contributing node."""
        loss = self._nodes[loss_nid].value
        if loss.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.shape}")
        grads: list[np.ndarray | None] = [None] * len(self._nodes)
        grads[loss_nid] = np.ones(loss.shape, dtype=loss.dtype)
        for nid in range(loss_nid, -1, -1):
            node = self._nodes[nid]
            g = grads[nid]
            if g is None or node.op is None:
                continue
            input_grads = OPS[node.op].backward(node.ctx, g)
            for i, gi in zip(node.inputs, input_grads):
                if gi is None:
                    continue
                expect = self._nodes[i].value.shape
                if gi.shape != expect:
                    raise RuntimeError(
                        f"op {node.op!r}: gradient shape {gi.shape} != "
                        f"input shape {expect}"
                    )
                # fan-out: gradients accumulate by addition
                grads[i] = gi if grads[i] is None else grads[i] + gi
        return {i: Tensor(g) for i, g in enumerate(grads) if g is not None}


# ---------------------------------------------------------------------------
# elementwise / reduction ops


def _ew_add_fw(ctx, a, b):
    return a + b


def _ew_add_bw(ctx, g):
    return g, g


def _ew_sub_fw(ctx, a, b):
    return a - b


def _ew_sub_bw(ctx, g):
    return g, -g


def _ew_mul_fw(ctx, a, b):
    ctx["a"], ctx["b"] = a, b
    return a * b


def _ew_mul_bw(ctx, g):
    return g * ctx["b"], g * ctx["a"]


def _scale_fw(ctx, a, *, factor):
    ctx["factor"] = factor
    return a * a.dtype.type(factor)


def _scale_bw(ctx, g):
    return (g * g.dtype.type(ctx["factor"]),)


def _expand_reduced(g, shape, axes, keepdims):
    if not keepdims:
        if axes is None:
            g = g.reshape((1,) * len(shape))
        else:
            g = np.expand_dims(g, axes)
    # copy() keeps 0-d shapes; ascontiguousarray would promote () to (1,)
    return np.broadcast_to(g, shape).copy()


def _sum_fw(ctx, a, *, axes=None, keepdims=False):
    ctx["shape"], ctx["axes"], ctx["keepdims"] = a.shape, axes, keepdims
    return np.asarray(a.sum(axis=axes, keepdims=keepdims))


def _sum_bw(ctx, g):
    return (_expand_reduced(g, ctx["shape"], ctx["axes"], ctx["keepdims"]),)


def _mean_fw(ctx, a, *, axes=None, keepdims=False):
    ctx["shape"], ctx["axes"], ctx["keepdims"] = a.shape, axes, keepdims
    ctx["count"] = a.size if axes is None else int(
        np.prod([a.shape[ax] for ax in np.atleast_1d(axes)])
    )
    return np.asarray(a.mean(axis=axes, keepdims=keepdims))


def _mean_bw(ctx, g):
    full = _expand_reduced(g, ctx["shape"], ctx["axes"], ctx["keepdims"])
    return (full / g.dtype.type(ctx["count"]),)


register_op("add", _ew_add_fw, _ew_add_bw)
register_op("sub", _ew_sub_fw, _ew_sub_bw)
register_op("mul", _ew_mul_fw, _ew_mul_bw)
register_op("scale", _scale_fw, _scale_bw)
register_op("sum", _sum_fw, _sum_bw)
register_op("mean", _mean_fw, _mean_bw)


# ---------------------------------------------------------------------------
# finite-difference gradient checking


@dataclass
class GradcheckEntry:
    name: str
    max_rel_err: float
    ok: bool


@dataclass
class GradcheckReport:
    entries: list[GradcheckEntry]
    tolerance: float

    @property
    def ok(self) -> bool:
        return all(e.ok for e in self.entries)

    def format_table(self) -> str:
        width = max([len(e.name) for e in self.entries] + [9])
        lines = [f"{'parameter':<{width}}  {'max rel err':>12}  status"]
        for e in self.entries:
            status = "pass" if e.ok else "FAIL"
            lines.append(f"{e.name:<{width}}  {e.max_rel_err:>12.3e}  {status}")
        verdict = "pass" if self.ok else "FAIL"
        lines.append(f"overall: {verdict} (tolerance {self.tolerance:.0e})")
        return "\n".join(lines)


def gradcheck(build, params: dict, tolerance: float = 1e-4, h: float = 1e-4,
              max_entries_per_param: int | None = None, seed: int = 0
              ) -> GradcheckReport:
    """Compare reverse-mode gradients against central finite differences.

    build(params64) must construct a fresh tape from the given float64
    parameter arrays and return (tape, loss_nid, {param_name: leaf_nid}).
    The leaves must reference the passed arrays directly so that in-place
    perturbation is visible to a rebuild.  Relative error per entry is
    |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8); a parameter passes when its
    maximum over checked entries is <= tolerance.
    """
    params64 = {k: np.ascontiguousarray(v, dtype=np.float64)
                for k, v in params.items()}
    tape, loss_nid, nid_map = build(params64)
    if not np.isfinite(tape.value(loss_nid).item()):
        raise FloatingPointError("loss is non-finite at the expansion point")
    grads = tape.backward(loss_nid)

    rng = np.random.default_rng(seed)
    entries = []
    for name, arr in params64.items():
        nid = nid_map[name]
        g_ad = grads[nid].data if nid in grads else np.zeros_like(arr)
        if not np.all(np.isfinite(g_ad)):
            raise FloatingPointError(f"non-finite gradient for {name!r}")
        flat = arr.reshape(-1)
        gflat = g_ad.reshape(-1)
        if max_entries_per_param is not None and flat.size > max_entries_per_param:
            picks = np.sort(rng.choice(flat.size, max_entries_per_param,
                                       replace=False))
        else:
            picks = np.arange(flat.size)
        max_rel = 0.0
        for i in picks:
            orig = flat[i]
            flat[i] = orig + h
            t_p, l_p, _ = build(params64)
            f_plus = t_p.value(l_p).item()
            flat[i] = orig - h
            t_m, l_m, _ = build(params64)
            f_minus = t_m.value(l_m).item()
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise FloatingPointError(
                    f"non-finite loss while perturbing {name!r}[{i}]")
            g_fd = (f_plus - f_minus) / (2.0 * h)
            denom = max(abs(gflat[i]), abs(g_fd), 1e-8)
            max_rel = max(max_rel, abs(gflat[i] - g_fd) / denom)
        entries.append(GradcheckEntry(name, max_rel, max_rel <= tolerance))
    return GradcheckReport(entries, tolerance)
