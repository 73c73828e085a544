"""Segmentation metrics, HRF dataset ingestion and threshold sweeps."""

from __future__ import annotations

import csv
import logging
import re
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ndfield import read_field, write_field
from .rasters import IMAGE_EXT, load_image, load_mask
from .segmentation import SegParams, mask_from_vesselness, vesselness_map
from .vesselness import VesselnessParams, default_kernels

__all__ = [
    "Metrics",
    "EvalRecord",
    "confusion",
    "ingest_hrf",
    "load_image",
    "load_mask",
    "prepare_fundus",
    "sweep",
    "write_csv",
    "CSV_COLUMNS",
    "GROUPS",
]

log = logging.getLogger(__name__)

GROUPS = {"h": "healthy", "dr": "diabetic_retinopathy", "g": "glaucoma"}
CSV_COLUMNS = ("group", "t", "se_mean", "se_std", "sp_mean", "sp_std", "acc_mean", "acc_std",
               "n_images")
_NAME = re.compile(r"^(\d+)_(h|dr|g)$", re.IGNORECASE)
EXPECTED_PER_GROUP = 15


@dataclass(frozen=True)
class Metrics:
    """Pixel counts inside the field of view and the derived rates.

    A rate whose denominator is zero (e.g. sensitivity without vessel
    pixels) is NaN.
    """

    tp: int
    fp: int
    tn: int
    fn: int

    @staticmethod
    def _ratio(a, b):
        return a / b if b else float("nan")

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    @property
    def sensitivity(self):
        return self._ratio(self.tp, self.tp + self.fn)

    @property
    def specificity(self):
        return self._ratio(self.tn, self.tn + self.fp)

    @property
    def accuracy(self):
        return self._ratio(self.tp + self.tn, self.total)


@dataclass(frozen=True)
class EvalRecord:
    """One dataset image with its ground truth and field-of-view mask.

    Paths are ``None`` when the file was not found at ingestion.
    """

    image_id: str
    group: str
    image: Path
    truth: Path | None
    fov: Path | None


def confusion(pred, gt, fov):
    """Confusion counts of ``pred`` against ``gt`` over the pixels where ``fov`` is set."""
    pred, gt, fov = (np.asarray(a).astype(bool) for a in (pred, gt, fov))
    if not pred.shape == gt.shape == fov.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape}, gt {gt.shape}, fov {fov.shape}")
    if not fov.any():
        raise ValueError("field of view mask is empty")
    p, g = pred[fov], gt[fov]
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = int(p.size - tp - fp - fn)
    return Metrics(tp, fp, tn, fn)


def _find(directory, stem):
    if directory is None:
        return None
    for cand in sorted(directory.iterdir()):
        if cand.is_file() and cand.stem.lower() == stem.lower() and cand.suffix.lower() in IMAGE_EXT:
            return cand
    return None


def _subdir(root, *names):
    for child in sorted(root.iterdir()):
        if child.is_dir() and child.name.lower() in names:
            return child
    return None


def ingest_hrf(root_dir):
    """Records for an HRF-style tree ``images/``, ``manual1/`` and ``mask/``.

    Image stems must look like ``01_h``, ``07_dr`` or ``12_g`` (any case);
    the ground truth shares the stem and the FOV mask is ``<stem>_mask``.
    Files that do not match are skipped with a warning, and a warning is
    issued when fewer than 15 records per group are found.
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    images = _subdir(root, "images")
    truth = _subdir(root, "manual1", "manual")
    fov = _subdir(root, "mask", "masks")
    records = []
    if images is not None:
        for path in sorted(images.iterdir()):
            if not path.is_file() or path.suffix.lower() not in IMAGE_EXT:
                continue
            m = _NAME.match(path.stem)
            if m is None:
                warnings.warn(f"skipping {path.name}: name does not match <id>_<h|dr|g>",
                              stacklevel=2)
                continue
            stem = path.stem
            records.append(EvalRecord(
                image_id=stem,
                group=GROUPS[m.group(2).lower()],
                image=path,
                truth=_find(truth, stem),
                fov=_find(fov, stem + "_mask") or _find(fov, stem),
            ))
    if not records:
        warnings.warn(f"no HRF records found under {root}", stacklevel=2)
        return records
    counts = {g: sum(r.group == g for r in records) for g in GROUPS.values()}
    short = {g: n for g, n in counts.items() if n < EXPECTED_PER_GROUP}
    if short:
        warnings.warn(f"fewer than {EXPECTED_PER_GROUP} images in groups {short}", stacklevel=2)
    records.sort(key=lambda r: (list(GROUPS.values()).index(r.group), r.image_id))
    return records


def prepare_fundus(img, fov=None):
    """Replace pixels outside the field of view by the mean inside it.

    The dark surround otherwise produces a strong ring response at the FOV
    border.
    """
    img = np.asarray(img, dtype=float)
    if fov is None or fov.all():
        return img
    out = img.copy()
    out[~fov] = img[fov].mean()
    return out


def _cached_vesselness(record, img_fn, vparams, cache_dir, kernels_for):
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"{record.image_id}_{vparams.variant}.ndf"
        if path.exists():
            V, header = read_field(path)
            if header.get("meta", {}).get("params") == repr(vparams):
                return V
    f = img_fn()
    V = vesselness_map(f, vparams, kernels_for(f.shape, vparams))
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        write_field(path, V, vparams.scales, meta={"params": repr(vparams)})
        # re-read so cached and fresh runs threshold the same float32 values
        V, _ = read_field(path)
    return V


def sweep(records, t_grid, vparams=None, sparams=None, cache_dir=None, channel="green",
          fill_outside_fov=True):
    """Segment every record at every threshold and aggregate per group.

    Vesselness is computed once per image (and cached in ``cache_dir`` as
    an ndfield dump when given), then re-thresholded for each ``t``.

    Returns
    -------
    rows : list of dict
        One row per ``(group, t)`` with the keys of :data:`CSV_COLUMNS`.
    errors : list of (str, str)
        ``(image_id, message)`` for records that could not be evaluated.
    """
    t_grid = [float(t) for t in t_grid]
    if not t_grid:
        raise ValueError("threshold grid is empty")
    vparams = vparams or VesselnessParams()
    sparams = sparams or SegParams()
    kernel_cache = {}

    def kernels_for(shape, vp):
        if vp.variant == "frangi2d":
            return None
        if shape not in kernel_cache:
            kernel_cache.clear()
            kernel_cache[shape] = default_kernels(shape, vp)
        return kernel_cache[shape]

    per = {}
    errors = []
    for rec in records:
        try:
            if rec.truth is None or rec.fov is None:
                raise FileNotFoundError("ground truth or FOV mask missing")
            gt = load_mask(rec.truth)
            fov = load_mask(rec.fov)

            def img_fn(rec=rec, fov=fov):
                img = load_image(rec.image, channel)
                if img.shape != fov.shape:
                    raise ValueError(f"image {img.shape} and FOV {fov.shape} differ in size")
                return prepare_fundus(img, fov) if fill_outside_fov else img

            V = _cached_vesselness(rec, img_fn, vparams, cache_dir, kernels_for)
            if not V.shape == gt.shape == fov.shape:
                raise ValueError("image, ground truth and FOV differ in size")
            for t in t_grid:
                sp = SegParams(sparams.gamma, t, sparams.tau, sparams.nu)
                m = confusion(mask_from_vesselness(V, sp), gt, fov)
                per.setdefault((rec.group, t), []).append(m)
            log.info("evaluated %s", rec.image_id)
        except (OSError, ValueError) as exc:
            errors.append((rec.image_id, f"{type(exc).__name__}: {exc}"))
            log.error("failed %s: %s", rec.image_id, exc)
    rows = []
    order = list(GROUPS.values())
    for (group, t) in sorted(per, key=lambda k: (order.index(k[0]), k[1])):
        ms = per[(group, t)]
        row = {"group": group, "t": t, "n_images": len(ms)}
        for key, attr in (("se", "sensitivity"), ("sp", "specificity"), ("acc", "accuracy")):
            vals = np.array([getattr(m, attr) for m in ms])
            row[f"{key}_mean"] = float(np.nanmean(vals)) if np.isfinite(vals).any() else float("nan")
            row[f"{key}_std"] = float(np.nanstd(vals)) if np.isfinite(vals).any() else float("nan")
        rows.append(row)
    return rows, errors


def write_csv(rows, path):
    """Write sweep rows with the fixed column order."""
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{row[k]:.6f}" if isinstance(row[k], float) else row[k])
                        for k in CSV_COLUMNS})
