"""Image-comparison metrics: SSIM, PSNR, NRMSE, and their aggregation.

Images are floating-point emissivities, so the SSIM dynamic range and the
PSNR peak come from the reference image itself (range max-min and max
respectively), not from an 8-bit scale. SSIM uses a uniform square window
(default 7x7, valid positions only) with biased variance normalization;
the brute-force windowed formula in the tests pins that convention.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

METRICS = ("ssim", "psnr_db", "nrmse")
# higher-is-better polarity per metric
_HIGHER_BETTER = {"ssim": True, "psnr_db": True, "nrmse": False}


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class MetricRow:
    id: int
    ssim: float
    psnr_db: float
    nrmse: float


@dataclass(frozen=True)
class MetricsReport:
    rows: tuple[MetricRow, ...]
    # metric -> (mean, best, worst)
    aggregates: dict[str, tuple[float, float, float]]


def _window_sums(img: np.ndarray, w: int) -> np.ndarray:
    """Sums over all w-by-w windows (valid positions) via integral images."""
    c = np.cumsum(np.cumsum(img, axis=0), axis=1)
    c = np.pad(c, ((1, 0), (1, 0)))
    return c[w:, w:] - c[:-w, w:] - c[w:, :-w] + c[:-w, :-w]


def ssim(x: np.ndarray, ref: np.ndarray, window: int = 7,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean structural similarity over sliding uniform windows."""
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise MetricsError(f"shape mismatch {x.shape} vs {ref.shape}")
    if window % 2 != 1 or window < 1:
        raise MetricsError("window must be a positive odd integer")
    if x.shape[0] < window or x.shape[1] < window:
        raise MetricsError("image smaller than the SSIM window")
    rng_ref = float(ref.max() - ref.min())
    if rng_ref <= 0.0:
        raise MetricsError("reference image is constant; SSIM undefined")
    n = window * window
    mu_x = _window_sums(x, window) / n
    mu_y = _window_sums(ref, window) / n
    var_x = _window_sums(x * x, window) / n - mu_x * mu_x
    var_y = _window_sums(ref * ref, window) / n - mu_y * mu_y
    cov = _window_sums(x * ref, window) / n - mu_x * mu_y
    c1 = (k1 * rng_ref) ** 2
    c2 = (k2 * rng_ref) ** 2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def psnr(x: np.ndarray, ref: np.ndarray) -> float:
    """20 log10(peak / rmse), peak = max(ref); +inf for identical images."""
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise MetricsError(f"shape mismatch {x.shape} vs {ref.shape}")
    peak = float(ref.max())
    if peak <= 0.0:
        raise MetricsError("reference peak must be positive")
    mse = float(np.mean((x - ref) ** 2))
    if mse == 0.0:
        return math.inf
    return 20.0 * math.log10(peak / math.sqrt(mse))


def nrmse(x: np.ndarray, ref: np.ndarray) -> float:
    """||x - ref||_2 / ||ref||_2."""
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise MetricsError(f"shape mismatch {x.shape} vs {ref.shape}")
    norm = float(np.linalg.norm(ref))
    if norm == 0.0:
        raise MetricsError("reference has zero norm; NRMSE undefined")
    return float(np.linalg.norm(x - ref)) / norm


def aggregate(rows) -> MetricsReport:
    """Mean/best/worst per metric with the right polarity.

    Rows with infinite PSNR are excluded from the PSNR aggregates (a
    warning is emitted); if every row is infinite the PSNR aggregates are
    the +inf ideal.
    """
    rows = tuple(rows)
    if not rows:
        raise MetricsError("cannot aggregate an empty report")
    aggregates = {}
    for metric in METRICS:
        values = [getattr(r, metric) for r in rows]
        if metric == "psnr_db":
            finite = [v for v in values if math.isfinite(v)]
            if len(finite) < len(values):
                warnings.warn("infinite PSNR rows excluded from PSNR aggregates")
            values = finite or [math.inf]
        mean = sum(values) / len(values)
        if _HIGHER_BETTER[metric]:
            best, worst = max(values), min(values)
        else:
            best, worst = min(values), max(values)
        aggregates[metric] = (mean, best, worst)
    return MetricsReport(rows, aggregates)


def write_rows_csv(rows, path, dataset: str = "test"):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["dataset", "id", "ssim", "psnr_db", "nrmse"])
        for r in rows:
            w.writerow([dataset, r.id, f"{r.ssim:.6f}", f"{r.psnr_db:.6f}",
                        f"{r.nrmse:.6f}"])


def write_aggregate_csv(report: MetricsReport, path, dataset: str | None = None):
    """Mean/best/worst table; a leading dataset column only when labeled."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        header = ["metric", "mean", "best", "worst"]
        if dataset is not None:
            header = ["dataset"] + header
        w.writerow(header)
        for metric in METRICS:
            mean, best, worst = report.aggregates[metric]
            row = [metric, f"{mean:.6f}", f"{best:.6f}", f"{worst:.6f}"]
            if dataset is not None:
                row = [dataset] + row
            w.writerow(row)
