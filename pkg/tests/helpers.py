"""Shared fixture builders for the test suite."""

import numpy as np

from shadowlab import imagecore, ssgm, synth

TOY_SIZE = 32
TOY_FILTERS = imagecore.FilterConfig(dilate_radius=1, median_radius_pre=1, median_radius_post=1)


def shadow_fixture(rng, size=64, mode="attenuated"):
    """A toy page under one soft shadow: ``(shadow, gt, mask)``."""
    page = synth.toy_page(rng, size)
    mask = synth.toy_template(rng, size)
    a = rng.uniform(0.3, 0.6)
    color = synth.ShadowColor(*rng.uniform(0.0, 0.15, size=3))
    return synth.composite_shadow(page, mask, a, color, mode), page, mask


def composite_oracle(gt, mask, a, c, mode):
    """Per-sample scalar loop over the compositing rule, clipped to [0, 1]."""
    h, w, _ = gt.shape
    out = np.empty_like(gt)
    for i in range(h):
        for j in range(w):
            m = float(mask[i, j])
            for k in range(3):
                g = float(gt[i, j, k])
                if mode == "literal":
                    v = a * g + (1.0 - a) * m * c[k]
                else:
                    v = (1.0 - (1.0 - a) * m) * g + (1.0 - a) * m * c[k]
                out[i, j, k] = min(max(v, 0.0), 1.0)
    return out


def mask_scores(pred, truth, thresh=0.3):
    """Thresholded IoU and Pearson correlation of two soft masks."""
    p, t = pred > thresh, truth > thresh
    union = np.logical_or(p, t).sum()
    iou = np.logical_and(p, t).sum() / union if union else 1.0
    if pred.std() == 0 or truth.std() == 0:
        corr = 1.0 if np.allclose(pred, truth) else 0.0
    else:
        corr = float(np.corrcoef(pred.ravel(), truth.ravel())[0, 1])
    return float(iou), corr


def ssgm_suite(n=100, size=64, seed=0, cfg=None):
    cfg = cfg or ssgm.SsgmConfig(filters=imagecore.FilterConfig(2, 2, 1))
    ious, corrs = [], []
    for k in range(n):
        rng = np.random.default_rng([seed, k])
        shadow, _, truth = shadow_fixture(rng, size)
        iou, corr = mask_scores(ssgm.generate_soft_mask(shadow, cfg), truth)
        ious.append(iou)
        corrs.append(corr)
    return np.array(ious), np.array(corrs)


def toy_pairs(n, seed, size=TOY_SIZE, sources=40):
    """``n`` synthetic (shadow, gt, mask) triples on toy pages."""
    rng = np.random.default_rng(seed)
    pages = [synth.toy_page(rng, size) for _ in range(sources)]
    tpls = [synth.toy_template(rng, size) for _ in range(sources)]
    cfg = synth.SynthConfig(output_size=size, compositing_mode="attenuated", seed=seed,
                            gt_rotation_range=(0.0, 0.0), gt_scale_range=(1.0, 1.0),
                            max_offset_frac=0.0)
    out = [synth.synthesize(pages, tpls, cfg, i)[:3] for i in range(n)]
    return [list(x) for x in zip(*out)]
