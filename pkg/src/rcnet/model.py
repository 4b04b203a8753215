"""Residual encoder-decoder segmentation network.

Six residual blocks arranged as encoder (full, half, quarter resolution),
bridge, and decoder, joined by max pool / max unpool pairs whose argmax
indices are shared, plus identity skip additions from each encoder block to
the matching decoder stage.  A small output block (3x3 conv + norm + relu)
and a 1x1 two-channel head produce per-pixel class probabilities.

Every block is residual: main path of 3x3 conv -> norm (-> relu between
stacked convs), shortcut of 1x1 conv -> norm, joined by addition and a final
relu.

The same wiring function drives two executors: a direct evaluator over plain
tensors (no gradient bookkeeping, used for inference) and a tape recorder
(used for training).  Activations can be captured by name on the direct path.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import layers as L
from .autograd import Tape
from .tensor import Tensor

BLOCK_NAMES = ("block1", "block2", "block3", "bridge", "up1", "up2")
CHECKPOINT_MAGIC = b"RCN1"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class RCNetConfig:
    channels: tuple[int, ...] = (8, 16, 32, 32, 16, 8)
    convs_per_block: int = 1
    in_channels: int = 3
    num_classes: int = 2

    def __post_init__(self):
        ch = tuple(int(c) for c in self.channels)
        object.__setattr__(self, "channels", ch)
        if len(ch) != 6 or any(c < 1 for c in ch):
            raise ValueError(f"need six positive channel widths, got {ch}")
        if ch[3] != ch[2]:
            raise ValueError("bridge width must equal the deepest encoder width")
        if ch[4] != ch[1]:
            raise ValueError("first decoder width must mirror the second encoder")
        if self.convs_per_block not in (1, 2):
            raise ValueError(f"convs_per_block must be 1 or 2, got "
                             f"{self.convs_per_block}")
        if self.in_channels < 1 or self.num_classes != 2:
            raise ValueError("in_channels must be >= 1 and num_classes must be 2")

    def block_io(self) -> list[tuple[int, int]]:
        """(in, out) channel widths for the six blocks in order."""
        ch = self.channels
        ins = (self.in_channels, ch[0], ch[1], ch[2], ch[3], ch[4])
        return list(zip(ins, ch))


@dataclass
class ConvBN:
    conv: L.ConvParams
    bn: L.BatchNormParams


@dataclass
class BlockParams:
    convs: list[ConvBN]
    skip: ConvBN


@dataclass
class ModelParams:
    config: RCNetConfig
    blocks: dict[str, BlockParams]
    outblock: ConvBN
    head: L.ConvParams

    def _slots(self):
        for bname in BLOCK_NAMES:
            bp = self.blocks[bname]
            for i, cb in enumerate(bp.convs, 1):
                yield from _convbn_slots(f"{bname}.conv{i}", cb)
            yield from _convbn_slots(f"{bname}.skip", bp.skip)
        yield from _convbn_slots("outblock.conv", self.outblock,
                                 bn_prefix="outblock.bn")
        yield "head.kernel", self.head, "kernel"
        yield "head.bias", self.head, "bias"

    def named_tensors(self) -> dict[str, Tensor]:
        return {name: getattr(obj, attr) for name, obj, attr in self._slots()}

    def named_learnables(self) -> dict[str, Tensor]:
        return {name: t for name, t in self.named_tensors().items()
                if not name.endswith(("running_mean", "running_var"))}

    def get_tensor(self, name: str) -> Tensor:
        for n, obj, attr in self._slots():
            if n == name:
                return getattr(obj, attr)
        raise KeyError(name)

    def set_tensor(self, name: str, value: Tensor) -> None:
        for n, obj, attr in self._slots():
            if n == name:
                if tuple(value.shape) != tuple(getattr(obj, attr).shape):
                    raise ValueError(
                        f"{name}: shape {value.shape} != "
                        f"{getattr(obj, attr).shape}")
                setattr(obj, attr, value)
                return
        raise KeyError(name)

    def astype(self, dtype) -> "ModelParams":
        clone = build(self.config, seed=0)
        for name, t in self.named_tensors().items():
            clone.set_tensor(name, t.astype(dtype))
        return clone


def _convbn_slots(prefix, cb, bn_prefix=None):
    conv = cb.conv if isinstance(cb, ConvBN) else cb
    yield f"{prefix}.kernel", conv, "kernel"
    yield f"{prefix}.bias", conv, "bias"
    if isinstance(cb, ConvBN):
        bnp = bn_prefix or f"{prefix}.bn"
        for attr in ("gamma", "beta", "running_mean", "running_var"):
            yield f"{bnp}.{attr}", cb.bn, attr


def count_params(params: ModelParams) -> int:
    return sum(t.size for t in params.named_learnables().values())


# ---------------------------------------------------------------------------
# initialization


def _he_conv(rng, cout, cin, k, dtype):
    fan_in = cin * k * k
    std = np.sqrt(2.0 / fan_in)
    kernel = (rng.standard_normal((cout, cin, k, k)) * std).astype(dtype)
    return L.ConvParams(Tensor(kernel), Tensor(np.zeros(cout, dtype=dtype)))


def _fresh_bn(c, dtype):
    return L.BatchNormParams(
        gamma=Tensor(np.ones(c, dtype=dtype)),
        beta=Tensor(np.zeros(c, dtype=dtype)),
        running_mean=Tensor(np.zeros(c, dtype=dtype)),
        running_var=Tensor(np.ones(c, dtype=dtype)),
    )


def build(config: RCNetConfig, seed: int = 0, dtype=np.float32) -> ModelParams:
    """Deterministic He-initialized parameters: same config, seed, and dtype
    always give bit-identical tensors."""
    rng = np.random.default_rng(seed)
    blocks = {}
    for bname, (cin, cout) in zip(BLOCK_NAMES, config.block_io()):
        convs = []
        for i in range(config.convs_per_block):
            c_in = cin if i == 0 else cout
            convs.append(ConvBN(_he_conv(rng, cout, c_in, 3, dtype),
                                _fresh_bn(cout, dtype)))
        skip = ConvBN(_he_conv(rng, cout, cin, 1, dtype), _fresh_bn(cout, dtype))
        blocks[bname] = BlockParams(convs, skip)
    c_last = config.channels[5]
    outblock = ConvBN(_he_conv(rng, c_last, c_last, 3, dtype),
                      _fresh_bn(c_last, dtype))
    head = _he_conv(rng, config.num_classes, c_last, 1, dtype)
    return ModelParams(config, blocks, outblock, head)


# ---------------------------------------------------------------------------
# forward wiring, shared by both executors


class _DirectOps:
    """Evaluates eagerly on Tensors; optionally captures named activations."""

    def __init__(self, mode, capture, captured):
        self.mode = mode
        self.capture = capture
        self.captured = captured

    def conv(self, x, cp, padding, name):
        return L.conv2d(x, cp, padding)

    def bn(self, x, bp, name):
        return L.batchnorm2d(x, bp, self.mode)

    def relu(self, x):
        return L.relu(x)

    def add(self, a, b):
        return Tensor(a.data + b.data)

    def pool(self, x):
        return L.maxpool2d(x)

    def unpool(self, y, idx):
        return L.maxunpool2d(y, idx)

    def softmax(self, x):
        return L.softmax_channels(x)

    def cap(self, name, x):
        if self.capture is not None and (
                self.capture == "all" or name in self.capture):
            self.captured[name] = x
        return x


class _TapeOps:
    """Records ops on a tape; collects leaf ids for every learnable."""

    def __init__(self, tape, mode):
        self.tape = tape
        self.mode = mode
        self.param_nids: dict[str, int] = {}

    def _leaf(self, name, t):
        nid = self.tape.leaf(t)
        self.param_nids[name] = nid
        return nid

    def conv(self, x, cp, padding, name):
        w = self._leaf(f"{name}.kernel", cp.kernel)
        b = self._leaf(f"{name}.bias", cp.bias)
        return self.tape.record("conv2d", (x, w, b), padding=padding)

    def bn(self, x, bp, name):
        g = self._leaf(f"{name}.gamma", bp.gamma)
        b = self._leaf(f"{name}.beta", bp.beta)
        nid = self.tape.record(
            "batchnorm2d", (x, g, b),
            running_mean=bp.running_mean.data, running_var=bp.running_var.data,
            momentum=bp.momentum, eps=bp.eps, mode=self.mode)
        if self.mode == "train":
            new_rm, new_rv = self.tape.saved(nid, "new_running")
            bp.running_mean = Tensor(new_rm.astype(bp.running_mean.dtype))
            bp.running_var = Tensor(new_rv.astype(bp.running_var.dtype))
        return nid

    def relu(self, x):
        return self.tape.record("relu", (x,))

    def add(self, a, b):
        return self.tape.record("add", (a, b))

    def pool(self, x):
        nid = self.tape.record("maxpool2d", (x,))
        return nid, self.tape.saved(nid, "indices")

    def unpool(self, y, idx):
        return self.tape.record("maxunpool2d", (y,), indices=idx)

    def softmax(self, x):
        return self.tape.record("softmax_channels", (x,))

    def cap(self, name, x):
        return x


def _wire(ops, params: ModelParams, x):
    def block(h, name):
        bp = params.blocks[name]
        m = h
        for i, cb in enumerate(bp.convs, 1):
            m = ops.conv(m, cb.conv, 1, f"{name}.conv{i}")
            m = ops.bn(m, cb.bn, f"{name}.conv{i}.bn")
            if i < len(bp.convs):
                m = ops.relu(m)
        s = ops.conv(h, bp.skip.conv, 0, f"{name}.skip")
        s = ops.bn(s, bp.skip.bn, f"{name}.skip.bn")
        ops.cap(f"{name}.main", m)
        return ops.cap(name, ops.relu(ops.add(m, s)))

    b1 = block(x, "block1")
    b2 = block(b1, "block2")
    p1, idx1 = ops.pool(b2)
    ops.cap("pool1", p1)
    b3 = block(p1, "block3")
    p2, idx2 = ops.pool(b3)
    ops.cap("pool2", p2)
    bridge = block(p2, "bridge")
    u2 = ops.cap("unpool2", ops.unpool(bridge, idx2))
    u2 = ops.cap("skip2", ops.add(u2, b3))
    d1 = block(u2, "up1")
    u1 = ops.cap("unpool1", ops.unpool(d1, idx1))
    u1 = ops.cap("skip1", ops.add(u1, b2))
    d2 = block(u1, "up2")
    ob = ops.conv(d2, params.outblock.conv, 1, "outblock.conv")
    ob = ops.bn(ob, params.outblock.bn, "outblock.bn")
    ob = ops.cap("outblock", ops.relu(ob))
    logits = ops.cap("logits", ops.conv(ob, params.head, 0, "head"))
    return ops.cap("probs", ops.softmax(logits))


CAPTURE_NAMES = tuple(
    [f"{b}.main" for b in BLOCK_NAMES] + list(BLOCK_NAMES)
    + ["pool1", "pool2", "unpool2", "skip2", "unpool1", "skip1",
       "outblock", "logits", "probs"])


def _check_input(params, x_shape):
    if len(x_shape) != 4 or x_shape[1] != params.config.in_channels:
        raise ValueError(
            f"input must be [n, {params.config.in_channels}, h, w], "
            f"got {x_shape}")
    if x_shape[2] % 4 or x_shape[3] % 4:
        raise ValueError(
            f"spatial dims must be multiples of 4, got {x_shape[2]}x{x_shape[3]}")


def forward(params: ModelParams, x: Tensor, mode: str = "eval",
            capture=None) -> tuple[Tensor, dict[str, Tensor]]:
    """Direct (untaped) forward pass.  capture may be None, "all", or a set
    of names from CAPTURE_NAMES; unknown names raise."""
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    _check_input(params, tuple(x.shape))
    if capture is not None and capture != "all":
        unknown = set(capture) - set(CAPTURE_NAMES)
        if unknown:
            raise ValueError(f"unknown activation names {sorted(unknown)}; "
                             f"known: {', '.join(CAPTURE_NAMES)}")
    captured: dict[str, Tensor] = {}
    ops = _DirectOps(mode, capture, captured)
    probs = _wire(ops, params, x)
    return probs, captured


def forward_on_tape(tape: Tape, params: ModelParams, x: Tensor,
                    mode: str = "train") -> tuple[int, dict[str, int]]:
    """Records the full forward pass; returns the probability node id and a
    map of learnable name -> leaf node id."""
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    _check_input(params, tuple(x.shape))
    ops = _TapeOps(tape, mode)
    x_nid = tape.leaf(x)
    probs_nid = _wire(ops, params, x_nid)
    return probs_nid, ops.param_nids


# ---------------------------------------------------------------------------
# checkpoint serialization


def save_checkpoint(params: ModelParams, path) -> None:
    cfg = params.config
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<9I", *cfg.channels, cfg.convs_per_block,
                            cfg.in_channels, cfg.num_classes))
        tensors = params.named_tensors()
        f.write(struct.pack("<I", len(tensors)))
        for name, t in tensors.items():
            enc = name.encode("utf-8")
            f.write(struct.pack("<H", len(enc)))
            f.write(enc)
            f.write(struct.pack("<B", len(t.shape)))
            for d in t.shape:
                f.write(struct.pack("<I", d))
            f.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


def _read_exact(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise ValueError(f"checkpoint truncated while reading {what}")
    return buf


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}, "
                             f"expected {CHECKPOINT_MAGIC!r}")
        version, = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        fields = struct.unpack("<9I", _read_exact(f, 36, "config"))
        config = RCNetConfig(channels=fields[:6], convs_per_block=fields[6],
                             in_channels=fields[7], num_classes=fields[8])
        count, = struct.unpack("<I", _read_exact(f, 4, "tensor count"))
        params = build(config, seed=0)
        expected = set(params.named_tensors())
        seen = set()
        for _ in range(count):
            nlen, = struct.unpack("<H", _read_exact(f, 2, "name length"))
            name = _read_exact(f, nlen, "name").decode("utf-8")
            rank, = struct.unpack("<B", _read_exact(f, 1, f"{name} rank"))
            shape = tuple(
                struct.unpack("<I", _read_exact(f, 4, f"{name} dims"))[0]
                for _ in range(rank))
            n_items = int(np.prod(shape)) if shape else 1
            raw = _read_exact(f, 4 * n_items, f"{name} data")
            arr = np.frombuffer(raw, dtype="<f4").reshape(shape)
            if name not in expected:
                raise ValueError(f"checkpoint has unexpected tensor {name!r}")
            params.set_tensor(name, Tensor(arr.astype(np.float32)))
            seen.add(name)
        if seen != expected:
            missing = sorted(expected - seen)
            raise ValueError(f"checkpoint is missing tensors: {missing[:5]}")
        if f.read(1):
            raise ValueError("trailing bytes after checkpoint payload")
    return params
