"""Dataset ingestion and synthesis.

Reads TUM-layout RGB-D sequences (``rgb.txt`` / ``depth.txt`` /
``groundtruth.txt`` timestamp indexes plus PNG rasters), sidecar
``.slab`` per-pixel label rasters, and TUM-format trajectory text files.
Also generates synthetic box-world sequences with exact analytic depth,
standing in for a simulator so end-to-end runs have a closed-form ground
truth.

Loaders are stream producers and may decode frames concurrently, but
frames are always delivered in timestamp order.
"""

from __future__ import annotations

import math
import struct
from bisect import bisect_left
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .geom import CameraIntrinsics, Pose, interpolate_pose
from .semantic import LabelTable, ProbabilityOverflow

SLAB_MAGIC = b"S3MSLAB1"
UNLABELED = 0xFFFF


class MissingIndexFile(FileNotFoundError):
    pass


class UnreadableImage(ValueError):
    pass


class NoAssociations(ValueError):
    """No rgb/depth (or est/ref) rows matched within tolerance."""


class BadHeader(ValueError):
    pass


class TruncatedFile(ValueError):
    pass


class EmptyScene(ValueError):
    pass


class DegenerateWaypoints(ValueError):
    pass


class InvalidScene(ValueError):
    pass


# ----------------------------------------------------------------------
# frames and trajectories
# ----------------------------------------------------------------------


@dataclass
class LabeledFrame:
    """Time-stamped RGB-D frame with an optional top-k label raster.

    ``color`` is (h, w, 3) uint8, ``depth`` (h, w) uint16 raw units, and
    the label raster (when present) is a pair of (h, w, k) arrays of
    uint16 ids (0xFFFF marks an empty slot) and float32 probabilities.
    """

    timestamp: float
    color: np.ndarray
    depth: np.ndarray
    label_ids: np.ndarray | None = None
    label_probs: np.ndarray | None = None

    def __post_init__(self):
        h, w = self.depth.shape
        if self.color.shape != (h, w, 3):
            raise ValueError("color and depth rasters must share dimensions")
        if (self.label_ids is None) != (self.label_probs is None):
            raise ValueError("label ids and probs must be given together")
        if self.label_ids is not None and (
            self.label_ids.shape[:2] != (h, w) or self.label_ids.shape != self.label_probs.shape
        ):
            raise ValueError("label raster must share frame dimensions")


@dataclass(frozen=True)
class LabelRaster:
    """Per-pixel top-k label slots; parallel (h, w, k) id and prob arrays."""

    ids: np.ndarray
    probs: np.ndarray

    @property
    def k(self) -> int:
        return self.ids.shape[2]


@dataclass(frozen=True)
class Trajectory:
    """Time-ordered poses; timestamps are strictly increasing."""

    stamps: tuple[float, ...]
    poses: tuple[Pose, ...]

    def __post_init__(self):
        if len(self.stamps) != len(self.poses):
            raise ValueError("one pose per timestamp required")
        if any(b <= a for a, b in zip(self.stamps, self.stamps[1:])):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.stamps)

    def __iter__(self):
        return iter(zip(self.stamps, self.poses))

    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses])

    def interpolate(self, t: float, tolerance: float = math.inf) -> Pose | None:
        """Pose at time ``t``: linear in translation, spherical in rotation.

        Outside the covered interval the nearest end pose is returned when
        within ``tolerance``, otherwise None.
        """
        if not self.stamps:
            return None
        if t <= self.stamps[0]:
            return self.poses[0] if self.stamps[0] - t <= tolerance else None
        if t >= self.stamps[-1]:
            return self.poses[-1] if t - self.stamps[-1] <= tolerance else None
        i = bisect_left(self.stamps, t)
        t0, t1 = self.stamps[i - 1], self.stamps[i]
        u = (t - t0) / (t1 - t0)
        return interpolate_pose(self.poses[i - 1], self.poses[i], u)


def load_trajectory(path) -> Trajectory:
    """Parse a TUM trajectory file: `timestamp tx ty tz qx qy qz qw` lines."""
    stamps: list[float] = []
    poses: list[Pose] = []
    path = Path(path)
    if not path.is_file():
        raise MissingIndexFile(f"trajectory file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise ValueError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric field") from None
            stamps.append(vals[0])
            poses.append(Pose.from_quaternion(*vals[1:]))
    order = sorted(range(len(stamps)), key=lambda i: stamps[i])
    return Trajectory(tuple(stamps[i] for i in order), tuple(poses[i] for i in order))


def save_trajectory(path, trajectory: Trajectory) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("# timestamp tx ty tz qx qy qz qw\n")
        for t, pose in trajectory:
            tx, ty, tz = pose.translation
            qx, qy, qz, qw = pose.quaternion()
            f.write(f"{t:.6f} {tx:.9f} {ty:.9f} {tz:.9f} {qx:.9f} {qy:.9f} {qz:.9f} {qw:.9f}\n")


def associate_timestamps(a, b, tolerance: float) -> list[tuple[int, int]]:
    """Greedy nearest-timestamp matching within tolerance, each row used once.

    Candidate pairs are consumed smallest gap first (ties broken by index),
    so the result is symmetric in the two roles whenever all gaps differ.
    Returned pairs are sorted by the first sequence's time.
    """
    a = list(a)
    b = list(b)
    order_b = sorted(range(len(b)), key=lambda j: b[j])
    sorted_b = [b[j] for j in order_b]
    candidates = []
    for i, ta in enumerate(a):
        lo = bisect_left(sorted_b, ta - tolerance)
        j = lo
        while j < len(sorted_b) and sorted_b[j] <= ta + tolerance:
            candidates.append((abs(ta - sorted_b[j]), i, order_b[j]))
            j += 1
    candidates.sort()
    used_a: set[int] = set()
    used_b: set[int] = set()
    matches = []
    for _, i, j in candidates:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        matches.append((i, j))
    matches.sort(key=lambda m: (a[m[0]], m[0]))
    return matches


def _read_index(path: Path) -> list[tuple[float, str]]:
    if not path.is_file():
        raise MissingIndexFile(f"index file not found: {path}")
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected `timestamp filename`")
            rows.append((float(parts[0]), parts[1]))
    rows.sort(key=lambda r: r[0])
    return rows


def _load_color(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as e:
        raise UnreadableImage(f"cannot read color image {path}: {e}") from e


def _load_depth(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im)
    except (OSError, ValueError) as e:
        raise UnreadableImage(f"cannot read depth image {path}: {e}") from e
    if arr.ndim != 2:
        raise UnreadableImage(f"depth image {path} is not single-channel")
    return arr.astype(np.uint16)


@dataclass
class TumSequence:
    """Associated rgb/depth rows of one dataset directory.

    Iterating yields ``(LabeledFrame, ground_truth_pose_or_None)`` in
    timestamp order, loading images lazily.  Unmatched index rows are
    counted in ``skipped_rgb`` / ``skipped_depth``.
    """

    directory: Path
    entries: list[tuple[float, str, str]]
    groundtruth: Trajectory | None
    tolerance: float
    skipped_rgb: int
    skipped_depth: int

    def __len__(self) -> int:
        return len(self.entries)

    def load_frame(self, entry: tuple[float, str, str]) -> LabeledFrame:
        t, rgb_rel, depth_rel = entry
        return LabeledFrame(
            timestamp=t,
            color=_load_color(self.directory / rgb_rel),
            depth=_load_depth(self.directory / depth_rel),
        )

    def __iter__(self):
        for entry in self.entries:
            frame = self.load_frame(entry)
            pose = None
            if self.groundtruth is not None:
                pose = self.groundtruth.interpolate(frame.timestamp, self.tolerance)
            yield frame, pose


def load_tum_sequence(directory, association_tolerance: float = 0.02) -> TumSequence:
    """Open a TUM-layout dataset and associate rgb with depth rows.

    Rows are matched by nearest timestamp within the tolerance (greedy,
    each row used once); ground-truth poses, when present, are
    interpolated to the rgb timestamps during iteration.
    """
    directory = Path(directory)
    rgb_rows = _read_index(directory / "rgb.txt")
    depth_rows = _read_index(directory / "depth.txt")
    matches = associate_timestamps(
        [t for t, _ in rgb_rows], [t for t, _ in depth_rows], association_tolerance
    )
    gt_path = directory / "groundtruth.txt"
    groundtruth = load_trajectory(gt_path) if gt_path.is_file() else None
    entries = [(rgb_rows[i][0], rgb_rows[i][1], depth_rows[j][1]) for i, j in matches]
    return TumSequence(
        directory=directory,
        entries=entries,
        groundtruth=groundtruth,
        tolerance=association_tolerance,
        skipped_rgb=len(rgb_rows) - len(matches),
        skipped_depth=len(depth_rows) - len(matches),
    )


# ----------------------------------------------------------------------
# .slab label rasters
# ----------------------------------------------------------------------

_SLAB_REC = np.dtype([("id", "<u2"), ("prob", "<f4")])


def save_slab(path, raster: LabelRaster) -> None:
    """Write one label raster in the `.slab` layout."""
    h, w, k = raster.ids.shape
    rec = np.empty((h, w, k), dtype=_SLAB_REC)
    rec["id"] = raster.ids
    rec["prob"] = raster.probs
    with open(path, "wb") as f:
        f.write(SLAB_MAGIC)
        f.write(struct.pack("<IIB", w, h, k))
        f.write(rec.tobytes())


def load_slab(path) -> LabelRaster:
    """Read a `.slab` label raster and validate per-pixel probabilities."""
    data = Path(path).read_bytes()
    if len(data) < len(SLAB_MAGIC) + 9:
        raise TruncatedFile(f"{path}: shorter than the header")
    if data[: len(SLAB_MAGIC)] != SLAB_MAGIC:
        raise BadHeader(f"{path}: bad magic")
    w, h, k = struct.unpack_from("<IIB", data, len(SLAB_MAGIC))
    body = data[len(SLAB_MAGIC) + 9 :]
    expected = h * w * k * _SLAB_REC.itemsize
    if len(body) != expected:
        raise TruncatedFile(f"{path}: expected {expected} payload bytes, got {len(body)}")
    if k == 0:
        ids = np.full((h, w, 0), UNLABELED, dtype=np.uint16)
        probs = np.zeros((h, w, 0), dtype=np.float32)
        return LabelRaster(ids, probs)
    rec = np.frombuffer(body, dtype=_SLAB_REC).reshape(h, w, k)
    ids = rec["id"].copy()
    probs = rec["prob"].copy()
    valid = ids != UNLABELED
    masked = np.where(valid, probs.astype(np.float64), 0.0)
    if np.any(masked < 0.0) or np.any(masked > 1.0):
        raise ValueError(f"{path}: probability outside [0, 1]")
    sums = masked.sum(axis=2)
    if np.any(sums > 1.0 + 1e-6):
        bad = np.unravel_index(int(np.argmax(sums)), sums.shape)
        raise ProbabilityOverflow(f"{path}: pixel {bad} probabilities sum to {sums[bad]:.9g}")
    return LabelRaster(ids, probs)


def load_label_maps(directory) -> dict[float, LabelRaster]:
    """Load every `<timestamp>.slab` file of a directory, keyed by timestamp."""
    directory = Path(directory)
    out: dict[float, LabelRaster] = {}
    for path in sorted(directory.glob("*.slab")):
        try:
            stamp = float(path.stem)
        except ValueError:
            raise BadHeader(f"{path}: filename is not a timestamp") from None
        out[stamp] = load_slab(path)
    return out


# ----------------------------------------------------------------------
# synthetic scenes
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class Box:
    """Axis-aligned labeled box, corners in meters."""

    class_id: int
    min_corner: tuple[float, float, float]
    max_corner: tuple[float, float, float]


@dataclass(frozen=True)
class SceneSpec:
    """Box-world scene: a room with labeled boxes and a camera path.

    The room spans (0, 0, 0) to ``room`` and its interior walls act as one
    more labeled surface (``wall_class``).  Depth is exact ray-box
    intersection, optionally perturbed by Gaussian noise of ``depth_sigma``
    meters; each pixel's label is the hit surface's class at confidence
    ``1 - label_flip`` and is swapped for a uniformly random other class
    with probability ``label_flip``.
    """

    room: tuple[float, float, float]
    boxes: tuple[Box, ...]
    waypoints: tuple[tuple[float, float, float], ...]
    intrinsics: CameraIntrinsics
    labels: LabelTable
    wall_class: int = 0
    depth_sigma: float = 0.0
    label_flip: float = 0.0

    def validate(self) -> None:
        if any(e <= 0 for e in self.room):
            raise EmptyScene(f"room extents must be positive, got {self.room}")
        if self.depth_sigma < 0:
            raise InvalidScene("depth_sigma must be >= 0")
        if not (0.0 <= self.label_flip <= 1.0):
            raise InvalidScene("label_flip must be in [0, 1]")
        if not (0 <= self.wall_class < len(self.labels)):
            raise InvalidScene(f"wall_class {self.wall_class} not in the label table")
        for n, box in enumerate(self.boxes):
            lo, hi = np.asarray(box.min_corner), np.asarray(box.max_corner)
            if np.any(lo >= hi):
                raise InvalidScene(f"box {n} (class {box.class_id}) has empty extent")
            if np.any(lo < 0) or np.any(hi > np.asarray(self.room)):
                raise InvalidScene(f"box {n} (class {box.class_id}) lies outside the room")
            if not (0 <= box.class_id < len(self.labels)):
                raise InvalidScene(f"box {n} class {box.class_id} not in the label table")
        if not self.waypoints:
            raise DegenerateWaypoints("at least one waypoint required")
        for n, wp in enumerate(self.waypoints):
            if np.any(np.asarray(wp) < 0) or np.any(np.asarray(wp) > np.asarray(self.room)):
                raise InvalidScene(f"waypoint {n} lies outside the room")


def _look_rotation(forward: np.ndarray) -> np.ndarray:
    """World-from-camera rotation with the optical axis along ``forward``."""
    z = forward / np.linalg.norm(forward)
    up = np.array([0.0, 0.0, 1.0])
    x = np.cross(z, up)
    if np.linalg.norm(x) < 1e-9:
        up = np.array([0.0, 1.0, 0.0])
        x = np.cross(z, up)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    return np.column_stack([x, y, z])


def _path_poses(spec: SceneSpec, frame_count: int) -> list[Pose]:
    wps = np.asarray(spec.waypoints, dtype=np.float64)
    segs = wps[1:] - wps[:-1]
    lengths = np.linalg.norm(segs, axis=1)
    total = float(lengths.sum())
    if total <= 0.0:
        raise DegenerateWaypoints("waypoints provide no direction of travel")
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    poses = []
    for i in range(frame_count):
        s = (i / (frame_count - 1)) * total if frame_count > 1 else 0.0
        seg = min(int(np.searchsorted(cum, s, side="right")) - 1, len(segs) - 1)
        seg = max(seg, 0)
        while lengths[seg] == 0.0 and seg + 1 < len(segs):
            seg += 1
        u = (s - cum[seg]) / lengths[seg] if lengths[seg] > 0 else 0.0
        position = wps[seg] + u * segs[seg]
        tangent = segs[seg]
        if np.linalg.norm(tangent) == 0.0:
            # trailing repeated waypoint: keep the direction of travel
            nonzero = np.nonzero(lengths)[0]
            tangent = segs[nonzero[-1]]
        poses.append(Pose(_look_rotation(tangent), position))
    return poses


def _render_frame(spec: SceneSpec, pose: Pose, rng: np.random.Generator) -> LabeledFrame:
    k = spec.intrinsics
    h, w = k.height, k.width
    us, vs = np.meshgrid(np.arange(w), np.arange(h))
    dirs_cam = np.column_stack(
        [
            ((us.ravel() - k.cx) / k.fx),
            ((vs.ravel() - k.cy) / k.fy),
            np.ones(h * w),
        ]
    )
    dirs = dirs_cam @ pose.rotation.T
    origin = pose.translation
    d = np.where(dirs == 0.0, 1e-300, dirs)

    # exit through the room walls (camera is inside the room)
    room = np.asarray(spec.room)
    t_hi = (room[None, :] - origin[None, :]) / d
    t_lo = (0.0 - origin[None, :]) / d
    t_wall = np.where(d > 0, t_hi, t_lo).min(axis=1)
    t_best = t_wall
    cls_best = np.full(h * w, spec.wall_class, dtype=np.uint16)

    for box in spec.boxes:
        lo = np.asarray(box.min_corner)[None, :]
        hi = np.asarray(box.max_corner)[None, :]
        t1 = (lo - origin[None, :]) / d
        t2 = (hi - origin[None, :]) / d
        t_near = np.minimum(t1, t2).max(axis=1)
        t_far = np.maximum(t1, t2).min(axis=1)
        hit = (t_near <= t_far) & (t_far > 1e-9)
        t_hit = np.where(t_near > 1e-9, t_near, t_far)
        closer = hit & (t_hit < t_best)
        t_best = np.where(closer, t_hit, t_best)
        cls_best = np.where(closer, box.class_id, cls_best)

    depth_m = t_best.copy()  # ray parameter equals camera z (dir_cam z = 1)
    if spec.depth_sigma > 0.0:
        depth_m = depth_m + rng.normal(0.0, spec.depth_sigma, size=depth_m.shape)
    raw = np.round(depth_m * k.depth_scale)
    raw = np.where((raw < 1) | (raw > 0xFFFF), 0, raw).astype(np.uint16)

    labels = cls_best.copy()
    if spec.label_flip > 0.0:
        flip = rng.random(h * w) < spec.label_flip
        n_classes = len(spec.labels)
        if n_classes > 1:
            offsets = rng.integers(1, n_classes, size=h * w)
            labels = np.where(flip, (labels + offsets) % n_classes, labels).astype(np.uint16)
    prob = np.float32(1.0 - spec.label_flip)

    palette = np.array(spec.labels.colors, dtype=np.uint8)
    color = palette[cls_best].reshape(h, w, 3)

    return LabeledFrame(
        timestamp=0.0,
        color=color,
        depth=raw.reshape(h, w),
        label_ids=labels.reshape(h, w, 1),
        label_probs=np.full((h, w, 1), prob, dtype=np.float32),
    )


def generate_synthetic(
    spec: SceneSpec, frame_count: int, seed: int
) -> tuple[list[LabeledFrame], Trajectory]:
    """Render a deterministic synthetic sequence with ground-truth poses.

    Camera poses follow the linearly interpolated waypoint path, looking
    along the direction of travel; frames are stamped at 10 Hz.
    """
    spec.validate()
    if frame_count < 1:
        raise ValueError("frame_count must be >= 1")
    rng = np.random.default_rng(seed)
    poses = _path_poses(spec, frame_count)
    frames = []
    stamps = []
    for i, pose in enumerate(poses):
        frame = _render_frame(spec, pose, rng)
        frame.timestamp = round(i * 0.1, 6)
        frames.append(frame)
        stamps.append(frame.timestamp)
    return frames, Trajectory(tuple(stamps), tuple(poses))


def write_tum_dataset(directory, frames, trajectory: Trajectory, labels: LabelTable) -> None:
    """Write frames as a TUM-layout dataset plus `.slab` label rasters."""
    directory = Path(directory)
    for sub in ("rgb", "depth", "labels"):
        (directory / sub).mkdir(parents=True, exist_ok=True)
    rgb_lines = []
    depth_lines = []
    for frame in frames:
        stamp = f"{frame.timestamp:.6f}"
        Image.fromarray(frame.color).save(directory / "rgb" / f"{stamp}.png")
        Image.fromarray(frame.depth).save(directory / "depth" / f"{stamp}.png")
        if frame.label_ids is not None:
            save_slab(
                directory / "labels" / f"{stamp}.slab",
                LabelRaster(frame.label_ids, frame.label_probs),
            )
        rgb_lines.append(f"{stamp} rgb/{stamp}.png\n")
        depth_lines.append(f"{stamp} depth/{stamp}.png\n")
    with open(directory / "rgb.txt", "w", encoding="utf-8") as f:
        f.write("# timestamp filename\n")
        f.writelines(rgb_lines)
    with open(directory / "depth.txt", "w", encoding="utf-8") as f:
        f.write("# timestamp filename\n")
        f.writelines(depth_lines)
    save_trajectory(directory / "groundtruth.txt", trajectory)
    labels.save(directory / "labels.txt")
