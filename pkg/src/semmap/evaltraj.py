"""Trajectory accuracy metrics: ATE and RPE with rigid alignment.

Absolute trajectory error first aligns the estimated trajectory onto the
reference with the closed-form least-squares rigid transform (no scale,
reflection-corrected), then measures per-pose translation distances and
rotation angles.  Relative pose error compares relative motions over a
fixed frame step and is invariant to any global rigid transform of either
trajectory.  Both report RMSE over the per-pose (or per-pair) residuals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geom import Pose, compose, invert, rotation_angle
from .ingest import NoAssociations, Trajectory, associate_timestamps


class LengthMismatch(ValueError):
    pass


class DegenerateConfiguration(ValueError):
    """Positions are coincident or collinear; the rotation is not unique."""


class TooFewAssociations(ValueError):
    pass


class BadDelta(ValueError):
    pass


@dataclass(frozen=True)
class AteReport:
    """Absolute trajectory error after rigid alignment."""

    rmse_translation: float
    rmse_rotation: float
    trans_residuals: np.ndarray
    rot_residuals: np.ndarray
    alignment: Pose


@dataclass(frozen=True)
class RpeReport:
    """Relative pose error over a fixed frame step."""

    delta: int
    rmse_translation: float
    rmse_rotation: float
    trans_residuals: np.ndarray
    rot_residuals: np.ndarray


def _rmse(residuals: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(residuals)))) if len(residuals) else 0.0


def align_umeyama(estimated: Trajectory, reference: Trajectory) -> Pose:
    """Rigid transform T minimizing sum ||ref_i - T(est_i)||^2, closed form.

    Trajectories must already be associated 1:1 (equal length, matching
    order).  The rotation comes from the SVD of the cross-covariance of
    the centered position sets, with the usual determinant correction to
    exclude reflections; raises DegenerateConfiguration when the
    positions are coincident or collinear.
    """
    if len(estimated) != len(reference):
        raise LengthMismatch(f"{len(estimated)} estimated vs {len(reference)} reference poses")
    if len(estimated) < 3:
        raise TooFewAssociations(f"need >= 3 associated poses, got {len(estimated)}")
    est = estimated.positions()
    ref = reference.positions()
    mu_est = est.mean(axis=0)
    mu_ref = ref.mean(axis=0)
    cov = (ref - mu_ref).T @ (est - mu_est) / len(est)
    u, s, vt = np.linalg.svd(cov)
    if s[1] <= max(s[0], 1e-300) * 1e-9:
        raise DegenerateConfiguration(
            "positions are collinear or coincident; alignment is not unique"
        )
    d = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        d[2] = -1.0
    rot = u @ np.diag(d) @ vt
    trans = mu_ref - rot @ mu_est
    return Pose(rot, trans)


def _associate(estimated: Trajectory, reference: Trajectory, tolerance: float):
    matches = associate_timestamps(estimated.stamps, reference.stamps, tolerance)
    if not matches:
        raise NoAssociations(f"no trajectory poses matched within {tolerance}s")
    est = Trajectory(
        tuple(estimated.stamps[i] for i, _ in matches),
        tuple(estimated.poses[i] for i, _ in matches),
    )
    ref = Trajectory(
        tuple(reference.stamps[j] for _, j in matches),
        tuple(reference.poses[j] for _, j in matches),
    )
    return est, ref


def ate(estimated: Trajectory, reference: Trajectory, tolerance: float = 0.02) -> AteReport:
    """Absolute trajectory error between timestamp-associated trajectories."""
    est, ref = _associate(estimated, reference, tolerance)
    if len(est) < 3:
        raise TooFewAssociations(f"need >= 3 associated poses, got {len(est)}")
    t = align_umeyama(est, ref)
    trans_res = np.empty(len(est))
    rot_res = np.empty(len(est))
    for i, (ep, rp) in enumerate(zip(est.poses, ref.poses)):
        aligned = compose(t, ep)
        trans_res[i] = float(np.linalg.norm(rp.translation - aligned.translation))
        rot_res[i] = rotation_angle(rp.rotation.T @ aligned.rotation)
    return AteReport(
        rmse_translation=_rmse(trans_res),
        rmse_rotation=_rmse(rot_res),
        trans_residuals=trans_res,
        rot_residuals=rot_res,
        alignment=t,
    )


def rpe(
    estimated: Trajectory, reference: Trajectory, delta: int = 1, tolerance: float = 0.02
) -> RpeReport:
    """Relative pose error over ``delta``-frame steps of associated poses."""
    if delta < 1:
        raise BadDelta(f"delta must be >= 1, got {delta}")
    est, ref = _associate(estimated, reference, tolerance)
    n = len(est)
    if n < delta + 1:
        raise TooFewAssociations(f"need >= {delta + 1} associated poses, got {n}")
    pairs = n - delta
    trans_res = np.empty(pairs)
    rot_res = np.empty(pairs)
    for i in range(pairs):
        rel_ref = compose(invert(ref.poses[i]), ref.poses[i + delta])
        rel_est = compose(invert(est.poses[i]), est.poses[i + delta])
        err = compose(invert(rel_ref), rel_est)
        trans_res[i] = float(np.linalg.norm(err.translation))
        rot_res[i] = rotation_angle(err.rotation)
    return RpeReport(
        delta=delta,
        rmse_translation=_rmse(trans_res),
        rmse_rotation=_rmse(rot_res),
        trans_residuals=trans_res,
        rot_residuals=rot_res,
    )


def write_residual_csv(path, trans_residuals, rot_residuals) -> None:
    """Per-pose residuals as `index,trans_err,rot_err` rows."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("index,trans_err,rot_err\n")
        for i, (te, re) in enumerate(zip(trans_residuals, rot_residuals)):
            f.write(f"{i},{te:.9g},{re:.9g}\n")
