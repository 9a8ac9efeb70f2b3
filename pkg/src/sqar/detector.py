"""Attack detection from the ensemble's mutual-information statistic.

Clean inputs give a characteristic average MI between quantized input and
quantized features; many gradient attacks push that statistic up.  The
detector thresholds the upward deviation from a clean-data calibration.  A
two-sided variant is available for attacks that depress MI instead; it is an
extension beyond the one-sided rule and off by default.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .ensemble import ensemble_eval


@dataclass(frozen=True)
class DetectorCalibration:
    mean_mi: float
    std_mi: float
    n_inputs: int
    n_members: int

    def __post_init__(self):
        if self.n_inputs < 2:
            raise ValueError("calibration needs at least 2 inputs")
        if self.std_mi < 0:
            raise ValueError("negative std")


@dataclass(frozen=True)
class RocCurve:
    points: np.ndarray      # (k, 2) rows of (false-positive, true-positive) rate
    auc: float

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64)
        object.__setattr__(self, "points", p)
        if not (0.0 <= self.auc <= 1.0):
            raise ValueError("auc outside [0, 1]")


def mi_scores(model, images, n_members=None, rng=None):
    """Per-image mean MI under hard-sample evaluation."""
    out = ensemble_eval(model, images, n_members=n_members, rng=rng,
                        collect_mi=True)
    if "mi" not in out:
        raise ValueError("model has no feature quantizer; MI undefined")
    return out["mi"]


def calibrate(model, clean_images, n_members=None, rng=None) -> DetectorCalibration:
    """Mean/std of per-input MI on unperturbed data."""
    X = np.asarray(clean_images, dtype=np.float64)
    if X.shape[0] < 2:
        raise ValueError("need at least 2 calibration inputs")
    mi = mi_scores(model, X, n_members=n_members, rng=rng)
    M = model.n_members if n_members is None else int(n_members)
    return DetectorCalibration(mean_mi=float(mi.mean()),
                               std_mi=float(mi.std(ddof=1)),
                               n_inputs=X.shape[0], n_members=M)


def detect(model, image, calibration: DetectorCalibration,
           threshold_offset, n_members=None, rng=None, two_sided=False):
    """Flag an input whose MI deviates above the clean average.

    Returns (flag, mi_value).  With two_sided the absolute deviation is
    compared instead (extension for MI-decreasing attacks).
    """
    mi = float(mi_scores(model, np.atleast_2d(image),
                         n_members=n_members, rng=rng)[0])
    dev = mi - calibration.mean_mi
    if two_sided:
        dev = abs(dev)
    return dev > threshold_offset, mi


def roc_from_scores(clean_scores, adv_scores) -> RocCurve:
    """Threshold sweep over the union of observed scores; trapezoidal AUC."""
    clean = np.asarray(clean_scores, dtype=np.float64)
    adv = np.asarray(adv_scores, dtype=np.float64)
    if clean.size == 0 or adv.size == 0:
        raise ValueError("both score sets must be non-empty")
    thresholds = np.concatenate(([np.inf], np.unique(np.concatenate([clean, adv]))[::-1],
                                 [-np.inf]))
    pts = []
    for th in thresholds:
        fpr = float((clean >= th).mean())
        tpr = float((adv >= th).mean())
        pts.append((fpr, tpr))
    pts = np.array(pts)
    trapezoid = getattr(np, "trapezoid", np.trapz)
    auc = float(trapezoid(pts[:, 1], pts[:, 0]))
    return RocCurve(points=pts, auc=auc)


def roc(model, clean_images, adv_images, calibration=None, n_members=None,
        seed=777) -> RocCurve:
    """ROC of the MI detector separating clean from adversarial inputs."""
    clean = mi_scores(model, clean_images, n_members=n_members,
                      rng=np.random.default_rng((seed, 0)))
    adv = mi_scores(model, adv_images, n_members=n_members,
                    rng=np.random.default_rng((seed, 1)))
    return roc_from_scores(clean, adv)


def write_roc_csv(curve: RocCurve, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["false_positive_rate", "true_positive_rate"])
        for fpr, tpr in curve.points:
            w.writerow([repr(float(fpr)), repr(float(tpr))])
