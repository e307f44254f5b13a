"""KITTI-style depth completion metrics: MAE, RMSE (mm) and iMAE, iRMSE (1/km)."""
from dataclasses import asdict, dataclass

import numpy as np

from .grid import DepthMap

CSV_FIELDS = ("mae_mm", "rmse_mm", "imae_per_km", "irmse_per_km", "valid_pixels", "coverage")


class EmptyEvaluationError(ValueError):
    """Raised when prediction and ground truth share no valid pixel."""


@dataclass(frozen=True)
class MetricReport:
    mae: float  # mm
    rmse: float  # mm
    imae: float  # 1/km
    irmse: float  # 1/km
    valid_pixels: int
    coverage: float  # fraction of valid ground-truth pixels the prediction covers

    def to_dict(self):
        return asdict(self)

    def csv_header(self):
        return ",".join(CSV_FIELDS)

    def to_csv(self):
        return (
            f"{self.mae!r},{self.rmse!r},{self.imae!r},{self.irmse!r},"
            f"{self.valid_pixels},{self.coverage!r}"
        )

    def pretty(self):
        return (
            f"MAE   {self.mae:12.3f} mm\n"
            f"RMSE  {self.rmse:12.3f} mm\n"
            f"iMAE  {self.imae:12.3f} 1/km\n"
            f"iRMSE {self.irmse:12.3f} 1/km\n"
            f"pixels {self.valid_pixels} (coverage {self.coverage:.4f})"
        )


def evaluate(pred: DepthMap, gt: DepthMap) -> MetricReport:
    """Metrics over pixels valid in both maps.

    Ground-truth pixels the prediction leaves invalid are not penalised; they
    show up as ``coverage < 1``.
    """
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in size")
    both = pred.valid & gt.valid
    n = int(both.sum())
    n_gt = int(gt.valid.sum())
    if n == 0:
        raise EmptyEvaluationError("no pixel is valid in both prediction and ground truth")
    e = pred.depth[both]
    g = gt.depth[both]
    err_mm = np.abs(e - g) * 1000.0
    ierr_km = np.abs(1.0 / e - 1.0 / g) * 1000.0
    return MetricReport(
        mae=float(err_mm.mean()),
        rmse=float(np.sqrt((err_mm ** 2).mean())),
        imae=float(ierr_km.mean()),
        irmse=float(np.sqrt((ierr_km ** 2).mean())),
        valid_pixels=n,
        coverage=n / n_gt,
    )
