"""Paired-dataset ingestion, batch runs and reports.

A dataset root follows the LOL layout: ``low/`` and ``high/`` side by side,
pairs matched by identical file names. ``run_batch`` optimises every pair
independently (optionally in a process pool) and writes enhanced PNGs,
per-image traces, a CSV report and an aggregate JSON.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import __version__
from .imagecore import ImageBuffer, ImageSpaceError, quantise, read_png, to_gray, write_png
from .metrics import QualityReport
from .optimizer import BoConfig, optimise_image
from .params import PARAM_NAMES, ParamBounds, ParamVector

log = logging.getLogger(__name__)

LAYOUTS = {"lol": ("low", "high")}
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}

# CSV column names; "lambda" is the parameter stored as ``lam`` on ParamVector
THETA_COLUMNS = tuple("lambda" if n == "lam" else n for n in PARAM_NAMES)
CSV_COLUMNS = ("id",) + THETA_COLUMNS + ("psnr", "ssim", "niqe", "objective", "seconds")


class DatasetError(OSError):
    pass


class BatchError(RuntimeError):
    pass


@dataclass(frozen=True)
class PairEntry:
    id: str
    low_path: Path
    ref_path: Path


@dataclass(frozen=True)
class PairedDataset:
    root: Path
    entries: tuple
    skipped: tuple = ()

    def __len__(self):
        return len(self.entries)

    def load(self, entry: PairEntry):
        return read_png(entry.low_path), read_png(entry.ref_path)


def _image_size(path: Path):
    with Image.open(path) as im:
        return im.size


def load_paired(root, layout: str = "lol") -> PairedDataset:
    """Match ``low/NAME`` with ``high/NAME`` under ``root``.

    Files present on one side only, or pairs whose images fail to decode or
    differ in size, are skipped with a warning.
    """
    root = Path(root)
    if layout not in LAYOUTS:
        raise ValueError(f"unknown layout {layout!r}; known: {sorted(LAYOUTS)}")
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} does not exist")
    low_name, ref_name = LAYOUTS[layout]
    sides = []
    for name in (low_name, ref_name):
        d = root / name
        files = {p.name: p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES} if d.is_dir() else {}
        sides.append(files)
    low, ref = sides
    skipped = []
    for name in sorted(set(low) ^ set(ref)):
        where = low_name if name in low else ref_name
        log.warning("skipping %s/%s: no counterpart", where, name)
        skipped.append(name)
    entries = []
    for name in sorted(set(low) & set(ref)):
        try:
            ok = _image_size(low[name]) == _image_size(ref[name])
            reason = "low and reference sizes differ"
        except (OSError, UnidentifiedImageError) as exc:
            ok, reason = False, f"cannot decode ({exc})"
        if not ok:
            log.warning("skipping %s: %s", name, reason)
            skipped.append(name)
            continue
        entries.append(PairEntry(Path(name).stem, low[name], ref[name]))
    if not entries:
        raise DatasetError(f"zero matched pairs under {root} ({low_name}/ vs {ref_name}/)")
    return PairedDataset(root, tuple(entries), tuple(skipped))


def image_seed(base_seed: int, image_id: str) -> int:
    """Per-image seed: base seed XOR the CRC-32 of the id (order independent)."""
    return (int(base_seed) ^ zlib.crc32(image_id.encode("utf-8"))) & 0xFFFFFFFF


# --- reports ------------------------------------------------------------------


@dataclass(frozen=True)
class ImageResult:
    id: str
    theta: ParamVector
    report: QualityReport
    seconds: float

    def row(self) -> dict:
        values = dict(zip(THETA_COLUMNS, self.theta.to_array().tolist()))
        return {"id": self.id, **values, **self.report.as_dict(), "seconds": self.seconds}


@dataclass
class BatchReport:
    results: list
    failures: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.results)

    def _mean(self, key):
        return float(np.mean([getattr(r.report, key) for r in self.results])) if self.results else math.nan

    @property
    def mean_psnr(self) -> float:
        return self._mean("psnr")

    @property
    def mean_ssim(self) -> float:
        return self._mean("ssim")

    @property
    def mean_niqe(self) -> float:
        return self._mean("niqe")

    @property
    def mean_objective(self) -> float:
        return self._mean("objective")

    def aggregate(self) -> dict:
        return {
            "n": self.n,
            "mean_psnr": self.mean_psnr,
            "mean_ssim": self.mean_ssim,
            "mean_niqe": self.mean_niqe,
            "mean_objective": self.mean_objective,
            "failures": dict(sorted(self.failures.items())),
            "config": self.config,
            "version": __version__,
        }

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in self.results:
            # repr keeps every float exact, so the file round-trips bit for bit
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.row().items()})
        return buf.getvalue()

    def write(self, out_dir) -> tuple:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / "report.csv"
        csv_path.write_text(self.csv_text())
        json_path = out_dir / "aggregate.json"
        json_path.write_text(json.dumps(self.aggregate(), indent=2) + "\n")
        return csv_path, json_path


def read_report_csv(path) -> list:
    """Parse a report CSV back into ``ImageResult`` objects."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            theta = ParamVector.from_array([float(row[c]) for c in THETA_COLUMNS])
            report = QualityReport(float(row["psnr"]), float(row["ssim"]), float(row["niqe"]), float(row["objective"]))
            out.append(ImageResult(row["id"], theta, report, float(row["seconds"])))
    return out


# --- batch execution ----------------------------------------------------------


def _run_one(entry: PairEntry, config: BoConfig, niqe_model, bounds, out_dir):
    start = time.perf_counter()
    low, ref = read_png(entry.low_path), read_png(entry.ref_path)
    cfg = replace(config, seed=image_seed(config.seed, entry.id))
    res = optimise_image(low, ref, niqe_model, cfg, bounds)
    if out_dir is not None:
        write_png(res.image, Path(out_dir) / "enhanced" / f"{entry.id}.png")
        res.write_trace(Path(out_dir) / "traces" / f"{entry.id}.jsonl")
    return ImageResult(entry.id, res.theta, res.report, time.perf_counter() - start)


def _run_one_safe(args):
    entry = args[0]
    try:
        return entry.id, _run_one(*args), None
    except Exception as exc:  # one bad image must not sink the batch
        return entry.id, None, f"{type(exc).__name__}: {exc}"


def run_batch(dataset: PairedDataset, config: BoConfig | None = None, niqe_model=None, worker_count: int = 1,
              out_dir=None, bounds: ParamBounds | None = None, config_echo: dict | None = None) -> BatchReport:
    """Optimise every pair; per-image failures are recorded, not raised.

    Raises ``BatchError`` only when every image fails.
    """
    from .niqe import default_model

    config = config or BoConfig()
    niqe_model = niqe_model or default_model()
    jobs = [(e, config, niqe_model, bounds, out_dir) for e in dataset.entries]
    if worker_count > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=worker_count) as pool:
            outcomes = list(pool.map(_run_one_safe, jobs))
    else:
        outcomes = [_run_one_safe(j) for j in jobs]
    results, failures = [], {}
    for image_id, result, error in outcomes:
        if error is None:
            results.append(result)
        else:
            log.error("image %s failed: %s", image_id, error)
            failures[image_id] = error
    if not results:
        raise BatchError(f"all {len(jobs)} images failed: {failures}")
    echo = {"bo": config.as_dict(), **(config_echo or {})}
    report = BatchReport(results, failures, echo)
    if out_dir is not None:
        report.write(out_dir)
    return report


def ablation(dataset: PairedDataset, config: BoConfig | None = None, niqe_model=None, worker_count: int = 1,
             bounds: ParamBounds | None = None):
    """Full 8-parameter search vs the 3-parameter baseline at equal budget and seeds."""
    config = config or BoConfig()
    full = run_batch(dataset, replace(config, baseline_mode=False), niqe_model, worker_count, bounds=bounds)
    base = run_batch(dataset, replace(config, baseline_mode=True), niqe_model, worker_count, bounds=bounds)
    return full, base


# --- histograms -----------------------------------------------------------------


def luminance_histogram(img: ImageBuffer) -> np.ndarray:
    """Normalised 256-bin histogram of 8-bit BT.601 luma."""
    luma = quantise(to_gray(img) if img.channels == 3 else img).data.astype(np.int64)
    counts = np.bincount(luma.ravel(), minlength=256)
    return counts / counts.sum()


def histogram_l1(a: ImageBuffer, b: ImageBuffer) -> float:
    return float(np.abs(luminance_histogram(a) - luminance_histogram(b)).sum())


def emit_histograms(low: ImageBuffer, enhanced: ImageBuffer, ref: ImageBuffer, out_path) -> Path:
    """Write a figure with the three luminance histograms and their L1 distances to the reference."""
    if not (low.shape == enhanced.shape == ref.shape):
        raise ImageSpaceError(f"image sizes differ: {low.shape}, {enhanced.shape}, {ref.shape}")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    bins = np.arange(256)
    fig, ax = plt.subplots(figsize=(7, 4))
    for img, label in ((low, "low"), (enhanced, "enhanced"), (ref, "reference")):
        ax.plot(bins, luminance_histogram(img), label=label, lw=1.2)
    ax.set_xlim(0, 255)
    ax.set_xlabel("luminance")
    ax.set_ylabel("fraction of pixels")
    ax.set_title(f"L1 to reference: enhanced {histogram_l1(enhanced, ref):.4f}, low {histogram_l1(low, ref):.4f}")
    ax.legend()
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, format="png")
    plt.close(fig)
    return out_path
