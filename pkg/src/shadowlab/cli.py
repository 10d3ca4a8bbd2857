"""``shadowlab`` command line: one binary, one subcommand per workflow.

Exit codes: 0 success, 1 usage error, 2 validation error, 3 runtime or
numerical error. Diagnostics go to stderr.

A ``--config`` file holds ``key = value`` lines (``#`` starts a comment).
Keys are option names with underscores; a flag on the command line beats the
file, which beats the built-in default.
"""

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import torch

from . import dataio, metrics, model, sde, ssgm, synth, verify
from .exceptions import DatasetIOError, InvalidInputError, NumericalDivergenceError
from .imagecore import FilterConfig

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2, 3

_BOOL_WORDS = {"1": True, "true": True, "yes": True, "on": True,
               "0": False, "false": False, "no": False, "off": False}


def _bool(text):
    if isinstance(text, bool):
        return text
    try:
        return _BOOL_WORDS[str(text).strip().lower()]
    except KeyError:
        raise ValueError(f"not a boolean: {text!r}") from None


# (name, type, default, help). A default of None means "required" for paths
# without a sensible fallback; the check happens after config merging.
_SSGM_OPTS = [
    ("dark_fraction", float, 0.1, "fraction of darkest background pixels averaged"),
    ("dilate_radius", int, 4, "dilation radius in pixels"),
    ("median_radius_pre", int, 5, "median radius after dilation"),
    ("median_radius_post", int, 3, "median radius on the mask"),
    ("degenerate_eps", float, 0.02, "background span below which the mask is zero"),
    ("invert", _bool, True, "report 1 for the darkest shadow core"),
]

_MODEL_OPTS = [
    ("width", int, 64, "denoiser feature width"),
    ("blocks", int, 4, "number of modulated residual blocks"),
    ("codec_width1", int, 16, "codec channels after the first stage"),
    ("codec_width2", int, 32, "latent channels"),
    ("steps", int, sde.DEFAULT_STEPS, "diffusion steps T"),
    ("noise_level", float, 50.0, "terminal noise level on the 0-255 scale"),
    ("polarity", str, "prose", "mask polarity of the noise gain: prose or literal"),
]

_TRAIN_OPTS = [
    ("split", str, "train", "manifest split used for training"),
    ("patch_size", int, 128, "training crop size in pixels"),
    ("batch_size", int, 4, "denoiser batch size"),
    ("iterations", int, 1000, "denoiser training steps"),
    ("codec_iterations", int, 3000, "codec pretraining steps"),
    ("lr", float, 3e-5, "denoiser learning rate"),
    ("codec_lr", float, 1e-2, "codec learning rate"),
    ("lam", float, 0.5, "weight of the noise loss against the feature loss"),
    ("optimizer", str, "adam", "adam, sgd or lion"),
    ("lr_schedule", str, "constant", "constant or cosine"),
    ("mask_source", str, "ssgm", "ssgm (generated) or dataset (manifest masks)"),
    ("diff_weighting", str, "gain", "gain or uniform weighting of the noise loss"),
    ("history", str, "", "optional CSV file for the per-step losses"),
]

_SYNTH_OPTS = [
    ("gt_dir", str, "", "directory of shadow-free pages"),
    ("template_dir", str, "", "directory of shadow templates"),
    ("toy_sources", int, 0, "use this many procedural pages and templates instead of dirs"),
    ("count", int, 16, "number of samples"),
    ("size", int, 512, "output crop size"),
    ("mode", str, "literal", "compositing mode: literal or attenuated"),
    ("weight_min", float, 0.3, "lower bound of the mixing weight a"),
    ("weight_max", float, 0.9, "upper bound of the mixing weight a"),
    ("color_max", float, 0.6, "upper bound of each shadow colour channel"),
    ("gt_rotation", float, 5.0, "max absolute page rotation in degrees"),
    ("gt_scale_max", float, 1.3, "max page zoom"),
    ("max_offset", float, 0.1, "max crop offset as a fraction of the size"),
]

COMMANDS = {
    "mask": ("write the soft shadow mask of an image",
             [("in", str, None, "input image"), ("out", str, None, "output mask PNG")]
             + _SSGM_OPTS),
    "synth": ("generate a synthetic shadow dataset with a manifest",
              [("out", str, None, "output dataset root")] + _SYNTH_OPTS
              + [("seed", int, 0, "random seed"), ("threads", int, 1, "worker threads")]),
    "hist": ("HSV colour histograms as channel,bin,count rows",
             [("in", str, None, "input image"), ("out", str, "", "output CSV (default stdout)"),
              ("bins", int, 256, "bins per channel")]),
    "train": ("pretrain the codec and train the denoiser",
              [("data", str, None, "dataset root with manifest.json"),
               ("out", str, None, "output checkpoint")]
              + _TRAIN_OPTS + _MODEL_OPTS + _SSGM_OPTS
              + [("seed", int, 0, "random seed"), ("threads", int, 1, "worker threads")]),
    "remove": ("remove shadows with a trained checkpoint",
               [("checkpoint", str, None, "checkpoint written by train"),
                ("in", str, None, "input image or directory"),
                ("out", str, None, "output image or directory"),
                ("deterministic", _bool, False, "use the noise-free reverse process"),
                ("seed", int, 0, "random seed"), ("threads", int, 1, "worker threads")]),
    "eval": ("PSNR/SSIM/RMSE of predictions against ground truth",
             [("pred", str, None, "directory of predictions"),
              ("gt", str, None, "directory of ground-truth images"),
              ("out", str, "", "output CSV (default stdout)"),
              ("threads", int, 1, "worker threads")]),
    "verify-sde": ("Monte-Carlo marginal and oracle-recovery checks",
                   [("paths", int, 10_000, "Monte-Carlo paths"),
                    ("runs", int, 16, "oracle-recovery fields"),
                    ("out", str, "", "report file (default stdout)"),
                    ("seed", int, 0, "random seed"), ("threads", int, 1, "worker threads")]),
}

CONFIG_KEYS = {name: typ for _, opts in COMMANDS.values() for name, typ, _, _ in opts}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def build_parser():
    parser = _Parser(prog="shadowlab", description="Document shadow removal laboratory.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    for cmd, (helptext, opts) in COMMANDS.items():
        p = sub.add_parser(cmd, help=helptext, description=helptext)
        p.add_argument("--config", default=None, help="key = value configuration file")
        for name, typ, default, text in opts:
            flag = "--" + name.replace("_", "-")
            shown = "required" if default is None else f"default: {default!r}"
            if typ is _bool:
                p.add_argument(flag, dest=name, default=None, action=argparse.BooleanOptionalAction,
                               help=f"{text} ({shown})")
            else:
                p.add_argument(flag, dest=name, default=None, type=typ, help=f"{text} ({shown})")
    return parser


def read_config(path):
    """Parse a ``key = value`` file; unknown keys and bad values are errors."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DatasetIOError(f"cannot read config {path}: {exc}", path=str(path)) from exc
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInputError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in CONFIG_KEYS:
            raise InvalidInputError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            out[key] = CONFIG_KEYS[key](value)
        except ValueError as exc:
            raise InvalidInputError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return out


def resolve(args):
    """Merge flags, config file and defaults into a plain dict."""
    _, opts = COMMANDS[args.command]
    file_cfg = read_config(args.config) if args.config else {}
    out = {}
    for name, _, default, _ in opts:
        value = getattr(args, name)
        if value is None:
            value = file_cfg.get(name, default)
        if value is None:
            raise UsageError(f"shadowlab {args.command}: --{name.replace('_', '-')} is required "
                             "(flag or config file)")
        out[name] = value
    return out


def _log(msg):
    print(msg, file=sys.stderr)


def _pmap(fn, items, threads):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def _check_threads(o):
    if o.get("threads", 1) < 1:
        raise InvalidInputError(f"threads must be >= 1, got {o['threads']}")


def _ssgm_config(o):
    return ssgm.SsgmConfig(
        dark_fraction=o["dark_fraction"],
        filters=FilterConfig(o["dilate_radius"], o["median_radius_pre"], o["median_radius_post"]),
        invert_to_convention=o["invert"], degenerate_eps=o["degenerate_eps"])


def cmd_mask(o):
    img = dataio.read_image(o["in"])
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=-1)
    dataio.write_image(o["out"], ssgm.generate_soft_mask(img, _ssgm_config(o)))


def cmd_synth(o):
    if o["toy_sources"] > 0:
        rng = np.random.default_rng([o["seed"], 7])
        side = max(o["size"], 32)
        gts = [synth.toy_page(rng, side) for _ in range(o["toy_sources"])]
        tpls = [synth.toy_template(rng, side) for _ in range(o["toy_sources"])]
    elif o["gt_dir"] and o["template_dir"]:
        gts = list(dataio.list_images(o["gt_dir"]).values())
        tpls = list(dataio.list_images(o["template_dir"]).values())
    else:
        raise InvalidInputError("give --gt-dir and --template-dir, or --toy-sources N")
    c = o["color_max"]
    cfg = synth.SynthConfig(
        weight_range=(o["weight_min"], o["weight_max"]), color_range=((0.0, c),) * 3,
        compositing_mode=o["mode"], output_size=o["size"], seed=o["seed"],
        gt_scale_range=(1.0, o["gt_scale_max"]),
        gt_rotation_range=(-o["gt_rotation"], o["gt_rotation"]), max_offset_frac=o["max_offset"])
    manifest = synth.generate_dataset(gts, tpls, cfg, o["count"], o["out"], threads=o["threads"])
    _log(f"wrote {len(manifest.records)} samples to {o['out']} "
         f"(splits {manifest.split_counts})")


def _crop(images, size, rng):
    h, w = images[0].shape[:2]
    if h <= size and w <= size:
        return images
    top = int(rng.integers(0, max(1, h - size + 1)))
    left = int(rng.integers(0, max(1, w - size + 1)))
    return [img[top:top + size, left:left + size] for img in images]


def cmd_train(o):
    mc = model.ModelConfig(
        codec_widths=(o["codec_width1"], o["codec_width2"]), width=o["width"],
        blocks=o["blocks"], steps=o["steps"], noise_level=o["noise_level"] / 255.0,
        polarity=o["polarity"],
        ssgm={"dark_fraction": o["dark_fraction"], "degenerate_eps": o["degenerate_eps"],
              "invert_to_convention": o["invert"],
              "filters": {"dilate_radius": o["dilate_radius"],
                          "median_radius_pre": o["median_radius_pre"],
                          "median_radius_post": o["median_radius_post"]}})
    tc = model.TrainConfig(
        patch_size=o["patch_size"], batch_size=o["batch_size"], lr=o["lr"],
        iterations=o["iterations"], codec_iterations=o["codec_iterations"],
        codec_lr=o["codec_lr"], seed=o["seed"], lam=o["lam"], optimizer=o["optimizer"],
        mask_source=o["mask_source"], diff_weighting=o["diff_weighting"],
        lr_schedule=o["lr_schedule"])
    root = Path(o["data"])
    manifest = dataio.load_manifest(root)
    use_masks = tc.mask_source == "dataset"
    loaded = dataio.load_split(root, manifest, o["split"], with_mask=use_masks)
    if not loaded[0]:
        raise InvalidInputError(f"split {o['split']!r} of {root} is empty")
    crop_rng = np.random.default_rng([tc.seed, 3])
    triples = [_crop(list(group), tc.patch_size, crop_rng) for group in zip(*loaded)]
    shadows = [t[0] for t in triples]
    gts = [t[1] for t in triples]
    net = model.ShadowDiffusion(mc, seed=tc.seed)
    if use_masks:
        masks = [t[2] for t in triples]
    else:
        masks = _pmap(net.soft_mask, shadows, o["threads"])
    _log(f"training on {len(shadows)} samples from {root} split={o['split']}")
    model.pretrain_codec(net, shadows + gts, tc, log=_log)
    data = model.prepare_training_data(net, shadows, gts, masks)
    reports = model.train_denoiser(net, data, tc, log=_log)
    net.save(o["out"])
    if o["history"]:
        lines = ["step,l_diff,l_fea,l_total"]
        lines += [f"{i},{r['l_diff']:.10g},{r['l_fea']:.10g},{r['l_total']:.10g}"
                  for i, r in enumerate(reports)]
        Path(o["history"]).write_text("\n".join(lines) + "\n", encoding="utf-8")
    _log(f"saved checkpoint {o['out']}")


def cmd_remove(o):
    net = model.ShadowDiffusion.load(o["checkpoint"])
    src = Path(o["in"])
    if src.is_dir():
        items = sorted(dataio.list_images(src).items())
        out_dir = Path(o["out"])
        jobs = [(i, path, out_dir / f"{stem}.png") for i, (stem, path) in enumerate(items)]
    else:
        jobs = [(0, src, Path(o["out"]))]

    def work(job):
        i, path, dest = job
        img = dataio.read_image(path)
        if img.ndim == 2:
            img = np.repeat(img[..., None], 3, axis=-1)
        rng = np.random.default_rng([o["seed"], i])
        dataio.write_image(dest, model.remove_shadow(net, img, rng,
                                                     deterministic=o["deterministic"]))

    _pmap(work, jobs, o["threads"])
    _log(f"restored {len(jobs)} image(s)")


def _emit(text, out):
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_hist(o):
    img = dataio.read_image(o["in"])
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=-1)
    rows = ["channel,bin,count"]
    rows += [f"{c},{b},{n}" for c, b, n in synth.histogram_rows(synth.color_histogram(img, o["bins"]))]
    _emit("\n".join(rows) + "\n", o["out"])


def cmd_eval(o):
    report = metrics.evaluate_dataset(o["pred"], o["gt"], threads=o["threads"])
    _emit(report.to_csv(), o["out"])


def cmd_verify_sde(o):
    report = verify.run_all(o["seed"], paths=o["paths"], runs=o["runs"], threads=o["threads"])
    _emit(report.to_text(), o["out"])
    return EXIT_OK if report.passed else EXIT_RUNTIME


HANDLERS = {"mask": cmd_mask, "synth": cmd_synth, "hist": cmd_hist, "train": cmd_train,
            "remove": cmd_remove, "eval": cmd_eval, "verify-sde": cmd_verify_sde}


def run(argv=None):
    """Run one subcommand and return its exit code."""
    torch.set_num_threads(1)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        opts = resolve(args)
    except UsageError as exc:
        _log(str(exc).rstrip())
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    except InvalidInputError as exc:
        _log(f"error: {exc}")
        return EXIT_INVALID
    except DatasetIOError as exc:
        _log(f"error: {exc}")
        return EXIT_RUNTIME
    try:
        _check_threads(opts)
        code = HANDLERS[args.command](opts)
    except InvalidInputError as exc:
        _log(f"error: {exc}")
        return EXIT_INVALID
    except (DatasetIOError, NumericalDivergenceError) as exc:
        _log(f"error: {exc}")
        return EXIT_RUNTIME
    return EXIT_OK if code is None else code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
