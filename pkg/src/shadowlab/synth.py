"""Synthetic colour-shadow dataset generation and colour histograms.

A shadow image is composited from a shadow-free page ``gt``, a soft mask
``m`` in ``[0, 1]``, a shadow weight ``a`` and a shadow colour ``C``::

    literal:    s = a * gt + (1 - a) * m * C
    attenuated: s = (1 - (1 - a) * m) * gt + (1 - a) * m * C

``literal`` applies the rule as written, so it also
scales unshadowed pixels by ``a``; ``attenuated`` leaves ``m == 0`` pixels
untouched.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import dataio, imagecore
from .exceptions import InvalidInputError
from .validation import check_image, check_same_shape

MODES = ("literal", "attenuated")


@dataclass(frozen=True)
class ShadowColor:
    r: float
    g: float
    b: float

    def __post_init__(self):
        for name in ("r", "g", "b"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidInputError(f"shadow colour component {name}={v} outside [0, 1]")

    def as_array(self):
        return np.array([self.r, self.g, self.b], dtype=np.float64)


@dataclass(frozen=True)
class SynthConfig:
    weight_range: tuple = (0.3, 0.9)
    color_range: tuple = ((0.0, 0.6), (0.0, 0.6), (0.0, 0.6))
    compositing_mode: str = "literal"
    output_size: int = 512
    seed: int = 0
    gt_scale_range: tuple = (1.0, 1.3)
    gt_rotation_range: tuple = (-5.0, 5.0)
    template_scale_range: tuple = (0.8, 1.5)
    template_rotation_range: tuple = (0.0, 360.0)
    max_offset_frac: float = 0.1
    ratio: tuple = dataio.DEFAULT_RATIO

    def __post_init__(self):
        lo, hi = self.weight_range
        if not 0.0 < lo <= hi < 1.0:
            raise InvalidInputError(f"weight_range must lie inside (0, 1), got {self.weight_range}")
        if len(self.color_range) != 3:
            raise InvalidInputError("color_range needs one interval per channel")
        for lo, hi in self.color_range:
            if not 0.0 <= lo <= hi <= 1.0:
                raise InvalidInputError(f"colour interval {(lo, hi)} outside [0, 1]")
        if self.compositing_mode not in MODES:
            raise InvalidInputError(f"compositing_mode must be one of {MODES}")
        if self.output_size < 16:
            raise InvalidInputError(f"output_size must be >= 16, got {self.output_size}")


@dataclass
class Histogram:
    channel: str
    bin_count: int
    counts: np.ndarray
    normalized: bool = False

    def normalize(self):
        total = self.counts.sum()
        return Histogram(self.channel, self.bin_count,
                         self.counts / total if total else self.counts.astype(np.float64),
                         normalized=True)


def prepare_template(template, scale=1.0, rotation=0.0, offset=(0.0, 0.0), size=512):
    """Equalise a mask template, warp it, and crop to ``size x size``.

    Zero pixels of the template are unshadowed and stay zero through the
    equalisation.
    """
    template = check_image(template, channels=1, name="template")
    eq = imagecore.histogram_equalize(template, ignore_zero=True)
    warped = imagecore.affine_crop(eq, scale=scale, rotation=rotation, offset=offset, size=size)
    return np.clip(warped, 0.0, 1.0)


def composite_shadow(gt, mask, a, color, mode="literal"):
    """Composite a coloured shadow onto ``gt``; output is clipped to ``[0, 1]``.

    Products are evaluated left to right as written in the module docstring.
    """
    gt = check_image(gt, channels=3, name="gt")
    mask = check_image(mask, channels=1, name="mask")
    check_same_shape(gt[..., 0], mask, ("gt", "mask"))
    if not 0.0 <= a <= 1.0:
        raise InvalidInputError(f"a must lie in [0, 1], got {a}")
    if mode not in MODES:
        raise InvalidInputError(f"mode must be one of {MODES}, got {mode!r}")
    c = color.as_array() if isinstance(color, ShadowColor) else np.asarray(color, dtype=np.float64)
    m = mask[..., None]
    w = 1.0 - a
    if mode == "literal":
        out = a * gt + w * m * c
    else:
        out = (1.0 - w * m) * gt + w * m * c
    return np.clip(out, 0.0, 1.0)


def sample_params(rng, cfg, gt_shapes, template_shapes):
    """Draw the generation parameters of one sample from ``rng``."""
    gi = int(rng.integers(len(gt_shapes)))
    ti = int(rng.integers(len(template_shapes)))
    size = cfg.output_size
    return {
        "gt_index": gi,
        "template_index": ti,
        "gt_transform": imagecore.sample_affine_params(
            rng, gt_shapes[gi], size, cfg.gt_scale_range, cfg.gt_rotation_range,
            cfg.max_offset_frac),
        "template_transform": imagecore.sample_affine_params(
            rng, template_shapes[ti], size, cfg.template_scale_range,
            cfg.template_rotation_range, cfg.max_offset_frac),
        "a": float(rng.uniform(*cfg.weight_range)),
        "color": [float(rng.uniform(lo, hi)) for lo, hi in cfg.color_range],
        "mode": cfg.compositing_mode,
    }


def render_sample(params, gt_sources, template_sources):
    """Rebuild ``(shadow, gt, mask)`` from recorded generation parameters."""
    gt_src = gt_sources[params["gt_index"]]
    tpl = template_sources[params["template_index"]]
    gt = imagecore.affine_crop(gt_src, **_transform_kwargs(params["gt_transform"]))
    mask = prepare_template(tpl, **_transform_kwargs(params["template_transform"]))
    shadow = composite_shadow(gt, mask, params["a"], ShadowColor(*params["color"]),
                              params["mode"])
    return shadow, gt, mask


def _transform_kwargs(t):
    return {"scale": t["scale"], "rotation": t["rotation"],
            "offset": tuple(t["offset"]), "size": t["size"]}


def sample_rng(seed, index):
    """Per-sample generator; independent of how samples are scheduled."""
    return np.random.default_rng([int(seed), int(index)])


def synthesize(gt_sources, template_sources, cfg, index):
    """Generate sample ``index`` in memory: ``(shadow, gt, mask, params)``."""
    rng = sample_rng(cfg.seed, index)
    params = sample_params(rng, cfg, [np.shape(g) for g in gt_sources],
                           [np.shape(t) for t in template_sources])
    params["seed"] = int(cfg.seed)
    params["index"] = int(index)
    shadow, gt, mask = render_sample(params, gt_sources, template_sources)
    return shadow, gt, mask, params


def _load_sources(sources, channels):
    out = []
    for src in sources:
        if isinstance(src, (str, Path)):
            img = dataio.read_image(src)
        else:
            img = np.asarray(src, dtype=np.float64)
        if channels == 3 and img.ndim == 2:
            img = np.repeat(img[..., None], 3, axis=-1)
        if channels == 1 and img.ndim == 3:
            img = imagecore.to_gray(img)
        out.append(check_image(img, channels=channels))
    return out


def generate_dataset(gt_sources, template_sources, cfg, count, out_dir, threads=1):
    """Write ``count`` synthetic triples under ``out_dir`` and return the manifest.

    Sources may be arrays or file paths. Splits follow ``cfg.ratio`` after a
    shuffle seeded by ``cfg.seed``. The output depends only on the sources,
    ``cfg`` and ``count``; ``threads`` changes nothing but wall time.
    """
    if count < 1:
        raise InvalidInputError(f"count must be >= 1, got {count}")
    gts = _load_sources(gt_sources, 3)
    tpls = _load_sources(template_sources, 1)
    if not gts or not tpls:
        raise InvalidInputError("need at least one ground-truth page and one template")
    out_dir = Path(out_dir)

    def work(index):
        shadow, gt, mask, params = synthesize(gts, tpls, cfg, index)
        sid = dataio.format_id(index)
        rels = {k: f"{k}/{sid}.png" for k in ("shadow", "gt", "mask")}
        dataio.write_image(out_dir / rels["shadow"], shadow)
        dataio.write_image(out_dir / rels["gt"], gt)
        dataio.write_image(out_dir / rels["mask"], mask)
        return dataio.SampleRecord(sid, rels["shadow"], rels["gt"], rels["mask"], "train", params)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(work, range(count)))
    else:
        records = [work(i) for i in range(count)]
    manifest = dataio.split_dataset(records, cfg.ratio, seed=cfg.seed)
    dataio.save_manifest(manifest, out_dir)
    return manifest


def color_histogram(img, bins=256):
    """Per-channel HSV histograms with uniform bins over ``[0, 1]``."""
    if bins < 2:
        raise InvalidInputError(f"bins must be >= 2, got {bins}")
    hsv = imagecore.rgb_to_hsv(img)
    hists = []
    for k, name in enumerate("HSV"):
        idx = np.minimum((hsv[..., k] * bins).astype(np.int64), bins - 1)
        counts = np.bincount(idx.ravel(), minlength=bins)
        hists.append(Histogram(name, bins, counts))
    return hists


def histogram_rows(hists):
    """Rows ``(channel, bin, count)`` for comma-separated output."""
    for h in hists:
        for b, c in enumerate(h.counts):
            yield h.channel, b, c


# --- procedural sources --------------------------------------------------
# Stand-ins for scanned pages and shadow templates, used for fixtures and
# the toy training experiments.

def toy_page(rng, size, stroke=None, line_pitch=None, paper=None):
    """A page of 1-D "text" strokes on tinted paper.

    Strokes are ``stroke`` pixels wide (default ``max(1, size // 64)``) in at
    least one direction, so a dilation wider than the stroke erases them.
    """
    h, w = (size, size) if np.isscalar(size) else size
    stroke = stroke or max(1, min(h, w) // 64)
    pitch = line_pitch or max(4, 4 * stroke)
    paper = np.asarray(paper if paper is not None else rng.uniform(0.85, 1.0, size=3))
    page = np.broadcast_to(paper, (h, w, 3)).copy()
    margin = max(1, w // 16)
    for top in range(margin, h - margin - stroke, pitch):
        ink = rng.uniform(0.0, 0.3, size=3)
        x = margin + int(rng.integers(0, max(1, pitch)))
        while x < w - margin:
            word = int(rng.integers(2 * stroke + 1, max(3 * stroke + 2, w // 5)))
            end = min(x + word, w - margin)
            page[top:top + stroke, x:end] = ink
            # vertical ticks, one stroke wide
            for tx in range(x, end, 2 * stroke + 1):
                if rng.random() < 0.5:
                    tall = int(rng.integers(1, max(2, pitch - stroke)))
                    page[max(0, top - tall):top, tx:tx + stroke] = ink
            x = end + int(rng.integers(stroke + 1, 3 * stroke + 3))
    return page


def toy_template(rng, size, smooth=None):
    """A soft shadow template: a blurred half-plane or ellipse, zero outside."""
    h, w = (size, size) if np.isscalar(size) else size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cy, cx = rng.uniform(0.25, 0.75) * h, rng.uniform(0.25, 0.75) * w
    if rng.random() < 0.5:
        ang = rng.uniform(0.0, 2.0 * np.pi)
        dist = (yy - cy) * np.sin(ang) + (xx - cx) * np.cos(ang)
        inside = dist > 0
    else:
        ry, rx = rng.uniform(0.2, 0.45) * h, rng.uniform(0.2, 0.45) * w
        inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 < 1.0
    smooth = smooth if smooth is not None else max(1.0, min(h, w) / 24.0)
    soft = ndimage.gaussian_filter(inside.astype(np.float64), smooth, mode="nearest")
    soft[soft < 1e-3] = 0.0
    return np.clip(soft, 0.0, 1.0)
