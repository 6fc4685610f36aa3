"""Trajectory alignment and error metrics, plus scheduling statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .geometry import Quat, from_matrix
from .imu import NavState
from .ingest import associate


@dataclass
class AlignedResult:
    rotation: Quat
    translation: np.ndarray
    scale: float
    ate_rmse: float
    errors: np.ndarray  # per-timestamp residual norms


def umeyama_align(
    est: np.ndarray, gt: np.ndarray, with_scale: bool
) -> tuple[np.ndarray, np.ndarray, float]:
    """Least-squares similarity (or rigid) transform est -> gt.

    Minimizes sum ||s R est_i + t - gt_i||^2 with det(R) = +1; s is
    forced to 1 when with_scale is False.
    """
    est = np.asarray(est, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if est.shape != gt.shape:
        raise ValueError(f"point sets differ in shape: {est.shape} vs {gt.shape}")
    if len(est) < 3:
        raise ValueError("need at least 3 point pairs")
    mu_e = est.mean(axis=0)
    mu_g = gt.mean(axis=0)
    de = est - mu_e
    dg = gt - mu_g
    cov = dg.T @ de / len(est)
    u, d, vt = np.linalg.svd(cov)
    if d[1] < 1e-12 * max(d[0], 1e-300):
        raise DataError("degenerate point configuration: rotation unobservable")
    s_fix = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0.0:
        s_fix[2, 2] = -1.0
    rot = u @ s_fix @ vt
    if with_scale:
        var_e = float(np.mean(np.sum(de * de, axis=1)))
        s = float(np.trace(np.diag(d) @ s_fix)) / var_e
    else:
        s = 1.0
    t = mu_g - s * rot @ mu_e
    return rot, t, s


def ate_rmse(
    est: list[NavState], gt: list[NavState], mode: str = "se3", tol: float = 0.0025
) -> AlignedResult:
    """RMSE of position residuals after trajectory alignment.

    ``mode`` selects rigid ("se3") or similarity ("sim3") alignment.
    Trajectories are matched by nearest timestamps within ``tol``.
    """
    if mode not in ("se3", "sim3"):
        raise ValueError(f"mode must be 'se3' or 'sim3', got {mode!r}")
    pairs, _ = associate([s.t for s in est], [s.t for s in gt], tol)
    if len(pairs) < 3:
        raise DataError(f"only {len(pairs)} matched timestamps; need >= 3")
    p_est = np.array([est[i].p for i, _ in pairs])
    p_gt = np.array([gt[j].p for _, j in pairs])
    rot, t, s = umeyama_align(p_est, p_gt, with_scale=(mode == "sim3"))
    resid = (s * (rot @ p_est.T)).T + t - p_gt
    errors = np.linalg.norm(resid, axis=1)
    rmse = float(np.sqrt(np.mean(errors**2)))
    return AlignedResult(from_matrix(rot), t, s, rmse, errors)


def scale_error(s_est: float, s_true: float) -> float:
    """Initialization scale error in percent."""
    if s_true <= 0.0:
        raise ValueError("true scale must be positive")
    return 100.0 * abs(s_est - s_true) / s_true


def schedule_stats(actions) -> tuple[int, float]:
    """(number of VO runs, skip ratio) of an action sequence."""
    actions = list(actions)
    if not actions:
        return 0, 0.0
    n_f = sum(1 for a in actions if int(a) == 1)
    return n_f, 1.0 - n_f / len(actions)
