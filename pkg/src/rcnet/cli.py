"""Command-line entry point.

Subcommands: train, predict, evaluate, gradcheck, params, augment,
dump-activations.  Settings come from a plain-text config file of
`key = value` lines (# starts a comment) with defaults for every key,
overridable with repeated --set key=value flags; unknown keys are rejected.
Each command that produces files writes the fully-resolved configuration
next to them as resolved.cfg.

Exit codes: 0 success, 1 internal or numeric failure, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import checks, data, metrics, model, netpbm, optim
from .tensor import Tensor


class ConfigError(Exception):
    pass


def _parse_bool(s):
    low = str(s).strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_channels(s):
    parts = [int(p) for p in str(s).split(",")]
    if len(parts) != 6:
        raise ValueError(f"need six comma-separated widths, got {s!r}")
    return tuple(parts)


def _parse_weights(s):
    if str(s).strip() == "auto":
        return "auto"
    parts = [float(p) for p in str(s).split(",")]
    if len(parts) != 2:
        raise ValueError(f"need 'auto' or two comma-separated weights, "
                         f"got {s!r}")
    return tuple(parts)


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    return str(v)


# key -> (parser, default)
CONFIG_KEYS = {
    "dataset_root": (str, ""),
    "protocol": (str, "drive-fixed"),
    "holdout_index": (int, 0),
    "stare_fov": (str, "synth"),
    "out_dir": (str, "out"),
    "seed": (int, 0),
    "channels": (_parse_channels, (8, 16, 32, 32, 16, 8)),
    "convs_per_block": (int, 1),
    "in_channels": (int, 3),
    "num_classes": (int, 2),
    "learning_rate": (float, 0.01),
    "batch_size": (int, 4),
    "epochs": (int, 10),
    "class_weights": (_parse_weights, "auto"),
    "deterministic": (_parse_bool, True),
    "augment": (_parse_bool, False),
    "max_train_samples": (int, 0),
    "rotation_step": (int, 1),
    "brightness_count": (int, 20),
    "brightness_low": (float, 0.8),
    "brightness_high": (float, 1.2),
    "threshold": (float, 0.5),
    "checkpoint": (str, ""),
    "input": (str, ""),
    "pred_dir": (str, ""),
    "layers": (str, "bridge"),
}


class RunConfig:
    def __init__(self, values: dict):
        self._values = values

    def __getattr__(self, key):
        try:
            return self._values[key]
        except KeyError:
            raise AttributeError(key) from None

    def require_path(self, key) -> Path:
        val = self._values[key]
        if not val:
            raise ConfigError(f"required key {key!r} is not set")
        return Path(val)

    def render(self) -> str:
        lines = [f"{k} = {_fmt(self._values[k])}" for k in sorted(self._values)]
        return "\n".join(lines) + "\n"

    def rcnet_config(self) -> model.RCNetConfig:
        return model.RCNetConfig(
            channels=self.channels, convs_per_block=self.convs_per_block,
            in_channels=self.in_channels, num_classes=self.num_classes)

    def train_config(self, class_weights=None) -> optim.TrainConfig:
        return optim.TrainConfig(
            learning_rate=self.learning_rate, batch_size=self.batch_size,
            epochs=self.epochs, seed=self.seed,
            class_weights=class_weights or self.class_weights,
            deterministic=self.deterministic,
            max_train_samples=self.max_train_samples)

    def augment_plan(self) -> data.AugmentPlan:
        return data.AugmentPlan(
            rotation_step=self.rotation_step,
            brightness_count=self.brightness_count,
            brightness_low=self.brightness_low,
            brightness_high=self.brightness_high, seed=self.seed)

    def load_split(self) -> data.DatasetSplit:
        root = self.require_path("dataset_root")
        if self.protocol == "drive-fixed":
            return data.load_drive(root)
        if self.protocol == "stare-50-50":
            return data.load_stare(root, "stare-50-50",
                                   fov_mode=self.stare_fov)
        if self.protocol == "stare-loo":
            return data.load_stare(root, "stare-loo", self.holdout_index,
                                   fov_mode=self.stare_fov)
        raise ConfigError(f"unknown protocol {self.protocol!r}")


def _parse_config_line(line, lineno, path):
    body = line.split("#", 1)[0].strip()
    if not body:
        return None
    if "=" not in body:
        raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
    key, value = (p.strip() for p in body.split("=", 1))
    return key, value


def load_config(path=None, overrides=()) -> RunConfig:
    raw = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from None
        for lineno, line in enumerate(text.splitlines(), 1):
            kv = _parse_config_line(line, lineno, path)
            if kv:
                raw[kv[0]] = kv[1]
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, value = (p.strip() for p in item.split("=", 1))
        raw[key] = value
    values = {}
    for key, text_value in raw.items():
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        parser, _ = CONFIG_KEYS[key]
        try:
            values[key] = parser(text_value)
        except ValueError as e:
            raise ConfigError(f"bad value for {key!r}: {e}") from None
    for key, (_, default) in CONFIG_KEYS.items():
        values.setdefault(key, default)
    return RunConfig(values)


def _prepare_out_dir(cfg) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved.cfg").write_text(cfg.render(), encoding="utf-8")
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_train(cfg: RunConfig) -> int:
    split = cfg.load_split()
    out = _prepare_out_dir(cfg)
    if cfg.class_weights == "auto":
        weights = optim.median_frequency_weights(split.train)
    else:
        weights = cfg.class_weights
    print(f"class weights: background {weights[0]:.4f}, "
          f"vessel {weights[1]:.4f}")
    samples = data.AugmentedSamples(split.train, cfg.augment_plan()) \
        if cfg.augment else split.train
    print(f"training on {len(samples)} samples "
          f"({'augmented' if cfg.augment else 'source'})")
    params = model.build(cfg.rcnet_config(), seed=cfg.seed)
    params, log = optim.train(params, samples, cfg.train_config(weights))
    for e in log.epochs:
        print(f"epoch {e.epoch}: loss {e.mean_loss:.6f} "
              f"acc {e.train_acc:.6f} ({e.wall_seconds:.1f}s)")
    model.save_checkpoint(params, out / "checkpoint.rcn")
    (out / "train_log.csv").write_text(log.to_csv(), encoding="utf-8")
    print(f"wrote {out / 'checkpoint.rcn'}")
    return 0


def _predict_one(params, image_path) -> np.ndarray:
    image = data.load_image_rgb(image_path)
    h, w = image.shape[1:]
    dummy = np.zeros((h, w), np.uint8)
    padded, _, _ = data.pad_sample(image, dummy, dummy)
    probs, _ = model.forward(params, Tensor(padded[None]), mode="eval")
    vessel = probs.data[0, 1, :h, :w]
    return np.rint(np.clip(vessel, 0.0, 1.0) * 65535.0).astype(np.uint16)


def cmd_predict(cfg: RunConfig) -> int:
    params = model.load_checkpoint(cfg.require_path("checkpoint"))
    src = cfg.require_path("input")
    if src.is_dir():
        images = sorted(src.glob("*.ppm"))
        if not images:
            raise FileNotFoundError(f"no .ppm images in {src}")
    elif src.is_file():
        images = [src]
    else:
        raise FileNotFoundError(f"input {src} does not exist")
    out = _prepare_out_dir(cfg)
    for path in images:
        pm = _predict_one(params, path)
        netpbm.write_pgm(out / f"{path.stem}.pgm", pm, maxval=65535)
        print(f"{path.stem}: wrote {pm.shape[1]}x{pm.shape[0]} map")
    return 0


def _crop(arr, hw):
    return np.ascontiguousarray(arr[:hw[0], :hw[1]])


def cmd_evaluate(cfg: RunConfig) -> int:
    split = cfg.load_split()
    pred_dir = cfg.require_path("pred_dir")
    out = _prepare_out_dir(cfg)
    items = []
    cropped = {}
    for s in split.test:
        path = pred_dir / f"{s.id}.pgm"
        if not path.is_file():
            raise FileNotFoundError(f"no prediction for test id {s.id!r} "
                                    f"at {path}")
        scores = netpbm.read_netpbm(path)
        if scores.ndim != 2:
            raise ValueError(f"{path}: prediction must be grayscale")
        if scores.shape != s.orig_hw:
            raise ValueError(f"{path}: size {scores.shape} != {s.orig_hw}")
        denom = 65535.0 if scores.dtype == np.uint16 else 255.0
        scores = scores.astype(np.float64) / denom
        gt, fov = _crop(s.label, s.orig_hw), _crop(s.fov, s.orig_hw)
        items.append((s.id, scores, gt, fov))
        cropped[s.id] = (scores, gt, fov)
    report = metrics.evaluate_images(items, threshold=cfg.threshold)
    (out / "report.csv").write_text(metrics.report_to_csv(report),
                                    encoding="utf-8")
    for s in split.test:
        scores, gt, fov = cropped[s.id]
        pred = (scores >= cfg.threshold).astype(np.uint8)
        netpbm.write_ppm(out / f"{s.id}_overlay.ppm",
                         metrics.render_overlay(pred, gt, fov))
    for im in (report.pooled, report.mean):
        cells = " ".join(
            f"{k}={metrics.format_cell(v)}"
            for k, v in zip(("se", "sp", "acc", "f1", "auc"), im.values()))
        print(f"{im.image_id.lower():6s} {cells}")
    print(f"wrote {out / 'report.csv'} and {len(split.test)} overlays")
    return 0


def cmd_gradcheck(full: bool) -> int:
    reports, ok = checks.run_all(exhaustive_entries=None if full else 40)
    for name, rep in reports:
        print(f"== {name}")
        print(rep.format_table())
        print()
    print(f"gradcheck: {'all passed' if ok else 'FAILURES above'}")
    return 0 if ok else 1


def cmd_params(cfg: RunConfig) -> int:
    params = model.build(cfg.rcnet_config(), seed=cfg.seed)
    print(model.count_params(params))
    return 0


def cmd_augment(cfg: RunConfig) -> int:
    split = cfg.load_split()
    plan = cfg.augment_plan()
    out = _prepare_out_dir(cfg)
    for sub in ("images", "labels", "masks"):
        (out / sub).mkdir(exist_ok=True)
    refs = data.expand_plan(split.train, plan)
    for n, ref in enumerate(refs, 1):
        s = data.apply_augmentation(split.train[ref.source_index], ref)
        rgb = np.rint(s.image.data.transpose(1, 2, 0) * 255.0).astype(np.uint8)
        netpbm.write_ppm(out / "images" / f"{s.id}.ppm",
                         np.ascontiguousarray(rgb))
        netpbm.write_pgm(out / "labels" / f"{s.id}.pgm",
                         (s.label * 255).astype(np.uint8))
        netpbm.write_pgm(out / "masks" / f"{s.id}.pgm",
                         (s.fov * 255).astype(np.uint8))
        if n % 200 == 0 or n == len(refs):
            print(f"wrote {n}/{len(refs)}")
    return 0


def cmd_dump_activations(cfg: RunConfig) -> int:
    params = model.load_checkpoint(cfg.require_path("checkpoint"))
    image_path = cfg.require_path("input")
    names = [n.strip() for n in cfg.layers.split(",") if n.strip()]
    if not names:
        raise ConfigError("key 'layers' names no activations")
    unknown = set(names) - set(model.CAPTURE_NAMES)
    if unknown:
        raise ConfigError(
            f"unknown activation names {sorted(unknown)}; known: "
            f"{', '.join(model.CAPTURE_NAMES)}")
    image = data.load_image_rgb(image_path)
    dummy = np.zeros(image.shape[1:], np.uint8)
    padded, _, _ = data.pad_sample(image, dummy, dummy)
    _, captured = model.forward(params, Tensor(padded[None]), mode="eval",
                                capture=set(names))
    out = _prepare_out_dir(cfg)
    for name in names:
        maps = captured[name].data[0]
        for ci, plane in enumerate(maps):
            lo, hi = float(plane.min()), float(plane.max())
            norm = (plane - lo) / (hi - lo) if hi > lo else \
                np.zeros_like(plane)
            arr = np.rint(norm * 255.0).astype(np.uint8)
            fname = f"{name.replace('.', '_')}_c{ci:03d}.pgm"
            netpbm.write_pgm(out / fname, arr)
        print(f"{name}: {maps.shape[0]} maps of "
              f"{maps.shape[2]}x{maps.shape[1]}")
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def _add_common(p):
    p.add_argument("--config", help="path to a key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rcnet",
        description="Retinal vessel segmentation with a residual "
                    "encoder-decoder network.")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, text in (("train", "train a model and write a checkpoint"),
                       ("params", "print the learnable parameter count"),
                       ("augment", "materialize the augmented training set"),
                       ("evaluate", "score predictions against ground truth")):
        p = sub.add_parser(name, help=text)
        _add_common(p)
        if name == "evaluate":
            p.add_argument("pred_dir", nargs="?",
                           help="directory of <id>.pgm probability maps")

    p = sub.add_parser("predict", help="write vessel probability maps")
    _add_common(p)
    p.add_argument("checkpoint", nargs="?", help="trained checkpoint file")
    p.add_argument("input", nargs="?", help="a .ppm image or a directory")

    p = sub.add_parser("gradcheck",
                       help="verify gradients against finite differences")
    p.add_argument("--full", action="store_true",
                   help="difference-check every parameter entry")

    p = sub.add_parser("dump-activations",
                       help="write intermediate feature maps as PGMs")
    _add_common(p)
    p.add_argument("checkpoint", nargs="?", help="trained checkpoint file")
    p.add_argument("input", nargs="?", help="a .ppm image")
    p.add_argument("--layers", help="comma-separated activation names")
    return parser


def _run(args) -> int:
    if args.command == "gradcheck":
        return cmd_gradcheck(args.full)
    overrides = list(args.set)
    for key in ("checkpoint", "input", "pred_dir", "layers"):
        if getattr(args, key, None):
            overrides.append(f"{key}={getattr(args, key)}")
    cfg = load_config(args.config, overrides)
    if args.command == "train":
        return cmd_train(cfg)
    if args.command == "predict":
        return cmd_predict(cfg)
    if args.command == "evaluate":
        return cmd_evaluate(cfg)
    if args.command == "params":
        return cmd_params(cfg)
    if args.command == "augment":
        return cmd_augment(cfg)
    if args.command == "dump-activations":
        return cmd_dump_activations(cfg)
    raise AssertionError(f"unhandled command {args.command}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except (ConfigError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValueError, FloatingPointError, RuntimeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
