"""Full-reference image quality metrics: PSNR, SSIM and RMSE.

PSNR and RMSE are reported on the 0-255 scale. ``*_y`` variants evaluate the
luma channel of full-range BT.601 YCrCb.
"""

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import dataio, imagecore
from .exceptions import InvalidInputError
from .validation import check_same_shape

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
COLUMNS = ("id", "psnr", "ssim", "rmse", "psnr_y", "ssim_y", "rmse_y")


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    check_same_shape(a, b)
    return a, b


def mse(a, b):
    a, b = _pair(a, b)
    d = 255.0 * (a - b)
    return float(np.mean(d * d))


def rmse(a, b):
    """Root mean squared error on the 0-255 scale."""
    return float(np.sqrt(mse(a, b)))


def psnr(a, b):
    """PSNR in dB on the 0-255 scale; identical inputs give ``PSNR_CAP``."""
    err = mse(a, b)
    if err == 0.0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(255.0 ** 2 / err)))


def _ssim_plane(a, b):
    # 11x11 window: radius 5 = truncate * sigma
    filt = lambda x: ndimage.gaussian_filter(x, SSIM_SIGMA, truncate=3.5, mode="reflect")
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    mu_a, mu_b = filt(a), filt(b)
    saa = filt(a * a) - mu_a * mu_a
    sbb = filt(b * b) - mu_b * mu_b
    sab = filt(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * sab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2)
    smap = num / den
    pad = (SSIM_WINDOW - 1) // 2
    return float(smap[pad:-pad, pad:-pad].mean())


def ssim(a, b):
    """Mean single-scale SSIM, dynamic range 1, averaged over channels.

    The SSIM map is averaged over the interior where the 11 x 11 window fits.
    """
    a, b = _pair(a, b)
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise InvalidInputError(f"ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, "
                                f"got {a.shape[:2]}")
    if a.ndim == 2:
        return _ssim_plane(a, b)
    return float(np.mean([_ssim_plane(a[..., k], b[..., k]) for k in range(a.shape[2])]))


def _luma_plane(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    return imagecore.rgb_to_ycrcb(np.clip(img, 0.0, 1.0))[..., 0]


def evaluate_pair(a, b, id=""):
    """All six metrics for one prediction/reference pair, as a dict row."""
    a, b = _pair(a, b)
    ya, yb = _luma_plane(a), _luma_plane(b)
    return {
        "id": id,
        "psnr": psnr(a, b), "ssim": ssim(a, b), "rmse": rmse(a, b),
        "psnr_y": psnr(ya, yb), "ssim_y": ssim(ya, yb), "rmse_y": rmse(ya, yb),
    }


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)

    @property
    def count(self):
        return len(self.rows)

    @property
    def means(self):
        if not self.rows:
            return {}
        return {k: float(np.mean([r[k] for r in self.rows])) for k in COLUMNS[1:]}

    def to_csv(self, include_mean=True):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COLUMNS)
        for r in self.rows:
            writer.writerow([r["id"]] + [f"{r[k]:.6f}" for k in COLUMNS[1:]])
        if include_mean and self.rows:
            m = self.means
            writer.writerow(["mean"] + [f"{m[k]:.6f}" for k in COLUMNS[1:]])
        return buf.getvalue()


def evaluate_dataset(pred_dir, gt_dir, threads=1):
    """Compare same-named images in two directories."""
    preds = dataio.list_images(pred_dir)
    gts = dataio.list_images(gt_dir)
    missing_gt = sorted(set(preds) - set(gts))
    missing_pred = sorted(set(gts) - set(preds))
    if missing_gt or missing_pred:
        raise InvalidInputError(
            f"unmatched files: no ground truth for {missing_gt}, no prediction for {missing_pred}")
    ids = sorted(preds)

    def work(i):
        return evaluate_pair(dataio.read_image(preds[i]), dataio.read_image(gts[i]), id=i)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(work, ids))
    else:
        rows = [work(i) for i in ids]
    return MetricReport(rows=rows)
