"""Image files, dataset manifests and train/valid/test splits.

On-disk layout of a dataset root::

    root/
      manifest.json
      shadow/00000.png
      gt/00000.png
      mask/00000.png

Paths stored in the manifest are relative to ``root``.
"""

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .exceptions import DatasetIOError, InvalidInputError
from .validation import check_image

MANIFEST_VERSION = "shadowlab-manifest/1"
MANIFEST_NAME = "manifest.json"
SPLITS = ("train", "valid", "test")
DEFAULT_RATIO = (12, 3, 1)
ID_WIDTH = 5


def format_id(index):
    return f"{int(index):0{ID_WIDTH}d}"


def read_image(path):
    """Read an 8-bit PNG (or any Pillow-readable file) into ``[0, 1]`` floats.

    Grayscale files yield ``(H, W)`` arrays, everything else ``(H, W, 3)``.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("L", "I;16", "I", "F", "1"):
                im = im.convert("L")
            elif im.mode != "RGB":
                im = im.convert("RGB")
            data = np.asarray(im, dtype=np.uint8)
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise DatasetIOError(f"cannot read image {path}: {exc}", path=str(path)) from exc
    return data.astype(np.float64) / 255.0


def quantize(img):
    """Round ``[0, 1]`` samples to bytes, halves away from zero."""
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.floor(img * 255.0 + 0.5).astype(np.uint8)


def write_image(path, img):
    img = check_image(img, name="image")
    path = Path(path)
    data = quantize(img)
    mode = "L" if data.ndim == 2 else "RGB"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(data, mode=mode).save(path, format="PNG")
    except OSError as exc:
        raise DatasetIOError(f"cannot write image {path}: {exc}", path=str(path)) from exc


@dataclass
class SampleRecord:
    id: str
    shadow: str
    gt: str
    mask: str = ""
    split: str = "train"
    params: dict = field(default_factory=dict)


@dataclass
class DatasetManifest:
    records: list
    version: str = MANIFEST_VERSION

    @property
    def split_counts(self):
        counts = {s: 0 for s in SPLITS}
        for rec in self.records:
            counts[rec.split] += 1
        return counts

    def subset(self, split):
        return [r for r in self.records if r.split == split]

    def check_ratio(self, ratio=DEFAULT_RATIO):
        return tuple(self.split_counts[s] for s in SPLITS) == split_sizes(len(self.records), ratio)

    def to_dict(self):
        return {
            "version": self.version,
            "split_counts": self.split_counts,
            "records": [asdict(r) for r in self.records],
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("version") != MANIFEST_VERSION:
            raise InvalidInputError(f"unsupported manifest version {data.get('version')!r}")
        records = [SampleRecord(**r) for r in data["records"]]
        ids = [r.id for r in records]
        if len(set(ids)) != len(ids):
            raise InvalidInputError("manifest contains duplicate ids")
        for r in records:
            if r.split not in SPLITS:
                raise InvalidInputError(f"record {r.id}: unknown split {r.split!r}")
        manifest = cls(records=records, version=data["version"])
        stated = data.get("split_counts")
        if stated is not None and stated != manifest.split_counts:
            raise InvalidInputError(
                f"split_counts {stated} disagree with records {manifest.split_counts}")
        return manifest

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def loads(cls, text):
        return cls.from_dict(json.loads(text))


def save_manifest(manifest, root):
    path = Path(root) / MANIFEST_NAME
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(manifest.dumps(), encoding="utf-8")
    except OSError as exc:
        raise DatasetIOError(f"cannot write manifest {path}: {exc}", path=str(path)) from exc
    return path


def load_manifest(root, check_files=True):
    root = Path(root)
    path = root / MANIFEST_NAME
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DatasetIOError(f"cannot read manifest {path}: {exc}", path=str(path)) from exc
    manifest = DatasetManifest.loads(text)
    if check_files:
        for rec in manifest.records:
            for rel in (rec.shadow, rec.gt, rec.mask):
                if rel and not (root / rel).is_file():
                    raise DatasetIOError(f"record {rec.id}: missing file {root / rel}",
                                         path=str(root / rel))
    return manifest


def split_sizes(n, ratio=DEFAULT_RATIO):
    """Split sizes for ``n`` records; valid/test are rounded, train takes the rest."""
    total = sum(ratio)
    n_valid = int(np.floor(n * ratio[1] / total + 0.5))
    n_test = int(np.floor(n * ratio[2] / total + 0.5))
    return n - n_valid - n_test, n_valid, n_test


def split_dataset(records, ratio=DEFAULT_RATIO, seed=0):
    """Assign splits after a seeded shuffle; record order is preserved."""
    records = list(records)
    if not records:
        raise InvalidInputError("cannot split an empty record list")
    if len(ratio) != 3 or any(r < 0 for r in ratio) or sum(ratio) <= 0:
        raise InvalidInputError(f"ratio must be three non-negative weights, got {ratio}")
    sizes = split_sizes(len(records), ratio)
    order = np.random.default_rng(seed).permutation(len(records))
    labels = np.repeat(np.array(SPLITS), sizes)
    assigned = [None] * len(records)
    for pos, idx in enumerate(order):
        assigned[idx] = str(labels[pos])
    out = []
    for rec, split in zip(records, assigned):
        out.append(SampleRecord(rec.id, rec.shadow, rec.gt, rec.mask, split, dict(rec.params)))
    return DatasetManifest(records=out)


def list_images(directory):
    """Map file stem to path for the PNG files in ``directory``."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetIOError(f"not a directory: {directory}", path=str(directory))
    return {p.stem: p for p in sorted(directory.iterdir())
            if p.is_file() and p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")}


def load_split(root, manifest, split, with_mask=False):
    """Load ``(shadow, gt[, mask])`` arrays for every record of a split."""
    root = Path(root)
    shadows, gts, masks = [], [], []
    for rec in manifest.subset(split):
        shadows.append(read_image(root / rec.shadow))
        gts.append(read_image(root / rec.gt))
        if with_mask and rec.mask:
            masks.append(read_image(root / rec.mask))
    if with_mask:
        return shadows, gts, masks
    return shadows, gts


def relpath(path, root):
    return Path(os.path.relpath(path, root)).as_posix()
