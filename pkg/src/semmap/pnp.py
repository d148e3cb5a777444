"""6-DoF camera pose refinement from 2D-3D correspondences.

Minimizes the total squared reprojection error

    cost(T) = sum_i || p_i - project(K, T * P_i) ||^2

over rigid transforms T.  Every pose passed to or returned from this
module is the transform *applied to world points* to produce camera-frame
points before projection (point-transform convention).  Trajectory files
store the inverse (the camera body pose in world coordinates); use
``RefineResult.world_from_camera`` at that boundary.

The solver is Levenberg-Marquardt on a 6-vector twist (axis-angle
rotation increment, then translation increment) applied as a
left-multiplied exponential update ``T <- exp(xi) * T``.  Damping is
multiplied by 10 on a rejected step and divided by 10 on acceptance, so
the accepted cost sequence never increases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geom import (
    CameraIntrinsics,
    Pose,
    compose,
    invert,
    rotation_from_axis_angle,
    skew,
)

_LAMBDA_MAX = 1e12


class InsufficientCorrespondences(ValueError):
    """Fewer than 3 correspondences cannot constrain a 6-DoF pose."""


class PointBehindCamera(ValueError):
    """A transformed point has non-positive depth; carries ``index``."""

    def __init__(self, index: int):
        super().__init__(f"correspondence {index} falls behind the camera")
        self.index = index


class DegenerateNormalEquations(ValueError):
    """The 6x6 normal equations are singular (collinear or otherwise rank-deficient geometry)."""


@dataclass(frozen=True)
class Correspondence:
    """Observed pixel and the 3D world point it is the image of."""

    pixel: np.ndarray
    world_point: np.ndarray

    def __post_init__(self):
        px = np.array(self.pixel, dtype=np.float64).reshape(2)
        wp = np.array(self.world_point, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(px)) and np.all(np.isfinite(wp))):
            raise ValueError("correspondence coordinates must be finite")
        px.flags.writeable = False
        wp.flags.writeable = False
        object.__setattr__(self, "pixel", px)
        object.__setattr__(self, "world_point", wp)


@dataclass(frozen=True)
class RefineConfig:
    max_iterations: int = 50
    convergence_tol: float = 1e-10
    initial_damping: float = 1e-3

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.convergence_tol <= 0:
            raise ValueError("convergence_tol must be positive")
        if self.initial_damping < 0:
            raise ValueError("initial_damping must be >= 0")


@dataclass(frozen=True)
class RefineResult:
    """Optimization outcome; ``pose`` uses the point-transform convention."""

    pose: Pose
    final_cost: float
    iterations: int
    converged: bool

    @property
    def world_from_camera(self) -> Pose:
        """Camera body pose in world coordinates (trajectory-file convention)."""
        return invert(self.pose)


def _stack(corrs) -> tuple[np.ndarray, np.ndarray]:
    pixels = np.array([c.pixel for c in corrs], dtype=np.float64)
    points = np.array([c.world_point for c in corrs], dtype=np.float64)
    return pixels, points


def residuals(pose: Pose, k: CameraIntrinsics, corrs) -> np.ndarray:
    """Per-correspondence 2D residuals p_i - project(T P_i), flattened to 2N."""
    pixels, points = _stack(corrs)
    q = pose.apply(points)
    bad = np.nonzero(q[:, 2] <= 0.0)[0]
    if bad.size:
        raise PointBehindCamera(int(bad[0]))
    proj = np.column_stack(
        [k.fx * q[:, 0] / q[:, 2] + k.cx, k.fy * q[:, 1] / q[:, 2] + k.cy]
    )
    return (pixels - proj).ravel()


def reprojection_cost(pose: Pose, k: CameraIntrinsics, corrs) -> float:
    """Sum of squared reprojection residuals in pixels^2."""
    r = residuals(pose, k, corrs)
    return float(r @ r)


def residual_jacobian(pose: Pose, k: CameraIntrinsics, corrs) -> np.ndarray:
    """(2N, 6) Jacobian of the residual vector in the twist at zero.

    Twist layout: columns 0-2 rotation (axis-angle), 3-5 translation.
    For a camera point q = T P, a left perturbation moves it by
    dq = delta_omega x q + delta_t, so dq/domega = -[q]_x and dq/dt = I;
    the chain rule with the projection derivative and the residual sign
    gives  J = [A [q]_x  |  -A]  with A = dproject/dq.
    """
    _, points = _stack(corrs)
    q = pose.apply(points)
    if np.any(q[:, 2] <= 0.0):
        raise PointBehindCamera(int(np.nonzero(q[:, 2] <= 0.0)[0][0]))
    n = len(corrs)
    jac = np.empty((2 * n, 6))
    for i in range(n):
        x, y, z = q[i]
        a = np.array(
            [[k.fx / z, 0.0, -k.fx * x / (z * z)], [0.0, k.fy / z, -k.fy * y / (z * z)]]
        )
        jac[2 * i : 2 * i + 2, 0:3] = a @ skew(q[i])
        jac[2 * i : 2 * i + 2, 3:6] = -a
    return jac


def se3_exp(twist: np.ndarray) -> Pose:
    """Exponential of a twist (omega, v) to a rigid transform."""
    twist = np.asarray(twist, dtype=np.float64).reshape(6)
    omega, v = twist[:3], twist[3:]
    r = rotation_from_axis_angle(omega)
    angle = float(np.linalg.norm(omega))
    w = skew(omega)
    if angle < 1e-10:
        vmat = np.eye(3) + 0.5 * w + (w @ w) / 6.0
    else:
        a2 = angle * angle
        vmat = (
            np.eye(3)
            + ((1.0 - math.cos(angle)) / a2) * w
            + ((angle - math.sin(angle)) / (a2 * angle)) * (w @ w)
        )
    return Pose(r, vmat @ v)


def apply_twist(pose: Pose, twist: np.ndarray) -> Pose:
    """Left-multiplied exponential update exp(twist) * pose."""
    return compose(se3_exp(twist), pose)


def refine_pose(
    initial: Pose, k: CameraIntrinsics, corrs, cfg: RefineConfig | None = None
) -> RefineResult:
    """Levenberg-Marquardt refinement of ``initial`` over the correspondences.

    Requires at least 3 correspondences and an initial pose that places
    every point at positive depth.  The accepted-cost sequence is
    non-increasing; iteration stops when an accepted step improves the
    cost by less than ``convergence_tol``, when damping escalation can no
    longer find a downhill step, or at ``max_iterations``.  Raises
    DegenerateNormalEquations when the residual Jacobian is numerically
    rank-deficient (e.g. collinear world points).
    """
    cfg = cfg or RefineConfig()
    corrs = list(corrs)
    if len(corrs) < 3:
        raise InsufficientCorrespondences(f"got {len(corrs)} correspondences, need >= 3")

    pose = initial
    cost = reprojection_cost(pose, k, corrs)
    lam = cfg.initial_damping
    iterations = 0
    converged = False

    for _ in range(cfg.max_iterations):
        iterations += 1
        r = residuals(pose, k, corrs)
        jac = residual_jacobian(pose, k, corrs)
        sv = np.linalg.svd(jac, compute_uv=False)
        if sv[-1] <= sv[0] * 1e-10:
            raise DegenerateNormalEquations(
                f"Jacobian rank-deficient (singular values {sv[0]:.3g} .. {sv[-1]:.3g})"
            )
        h = jac.T @ jac
        g = jac.T @ r

        accepted = False
        decrease = 0.0
        while True:
            try:
                delta = np.linalg.solve(h + lam * np.eye(6), -g)
            except np.linalg.LinAlgError:
                delta = None
            if delta is not None:
                candidate = apply_twist(pose, delta)
                try:
                    new_cost = reprojection_cost(candidate, k, corrs)
                except PointBehindCamera:
                    new_cost = math.inf
                if new_cost <= cost:
                    decrease = cost - new_cost
                    pose, cost = candidate, new_cost
                    lam = lam / 10.0
                    accepted = True
                    break
            lam = lam * 10.0 if lam > 0.0 else 1e-6
            if lam > _LAMBDA_MAX:
                break

        if not accepted:
            # no downhill step within the damping budget: a (local) minimum
            converged = True
            break
        if decrease < cfg.convergence_tol:
            converged = True
            break

    return RefineResult(pose=pose, final_cost=cost, iterations=iterations, converged=converged)
