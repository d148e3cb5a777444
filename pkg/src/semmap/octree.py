"""Probabilistic semantic occupancy octree.

Space is an origin-centered cube of edge ``resolution * 2**max_depth``,
recursively split into 8 children down to leaf voxels of edge
``resolution``.  Every observed leaf stores a clamped log-odds occupancy
value, a semantic label distribution, and a hit counter.  Occupancy is
updated additively in log-odds space (hit adds ``log(p_hit/(1-p_hit))``,
miss adds ``log(p_miss/(1-p_miss))``, the sum is clamped to
``[l_min, l_max]``); label distributions are fused with
:func:`semmap.semantic.fuse`.

The tree is a single-writer structure: all mutations must be serialized
through one thread.  Reads may run concurrently with other reads.  Frame
preprocessing (:func:`extract_frame_points`) is pure and may run on any
number of workers.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, TYPE_CHECKING

import numpy as np

from .geom import CameraIntrinsics, Pose
from .semantic import (
    EMPTY_DISTRIBUTION,
    FusionConfig,
    LabelTable,
    SemanticDistribution,
    SemanticPoint,
    argmax_label,
    from_pixel,
    fuse,
)

if TYPE_CHECKING:
    from .ingest import LabeledFrame

MAGIC = b"S3MMAP1\x00"
FORMAT_VERSION = 1
UNLABELED = 0xFFFF


class ProbabilityOutOfRange(ValueError):
    """log_odds is only defined on the open interval (0, 1)."""


class DimensionMismatch(ValueError):
    """Frame rasters do not match the camera model's image size."""


class MapFileError(ValueError):
    """Base class for map (de)serialization failures."""


class BadMagic(MapFileError):
    pass


class UnsupportedVersion(MapFileError):
    pass


class TruncatedStream(MapFileError):
    pass


class CorruptNode(MapFileError):
    pass


def log_odds(p: float) -> float:
    """ln(p / (1 - p)); raises ProbabilityOutOfRange unless 0 < p < 1."""
    if not (0.0 < p < 1.0):
        raise ProbabilityOutOfRange(f"probability {p!r} outside (0, 1)")
    return math.log(p / (1.0 - p))


def inverse_log_odds(l: float) -> float:
    """Logistic function, the inverse of :func:`log_odds`."""
    return 1.0 / (1.0 + math.exp(-l))


class Observation(Enum):
    HIT = "hit"
    MISS = "miss"


@dataclass(frozen=True)
class MapConfig:
    """Octree geometry plus occupancy-update and fusion parameters.

    The addressable volume is the cube of edge ``resolution * 2**max_depth``
    centered on ``origin``; points outside are dropped (and counted), not
    an error.
    """

    resolution: float = 0.1
    max_depth: int = 10
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    p_hit: float = 0.7
    p_miss: float = 0.4
    l_min: float = -2.0
    l_max: float = 3.5
    occupancy_threshold: float = 0.5 + 1e-9
    max_range: float = math.inf
    carve_free_space: bool = False
    fusion: FusionConfig = field(default_factory=FusionConfig)

    def __post_init__(self):
        origin = tuple(float(c) for c in self.origin)
        if len(origin) != 3:
            raise ValueError("origin must have 3 components")
        object.__setattr__(self, "origin", origin)
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if not (1 <= self.max_depth <= 16):
            raise ValueError("max_depth must be in [1, 16]")
        if not (0.5 < self.p_hit < 1.0):
            raise ValueError("p_hit must be in (0.5, 1)")
        if not (0.0 < self.p_miss < 0.5):
            raise ValueError("p_miss must be in (0, 0.5)")
        if not (self.l_min < 0.0 < self.l_max):
            raise ValueError("need l_min < 0 < l_max")
        if not (0.5 <= self.occupancy_threshold < 1.0):
            raise ValueError("occupancy_threshold must be in [0.5, 1)")
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")

    @property
    def cells(self) -> int:
        """Leaf voxels per axis."""
        return 1 << self.max_depth

    @property
    def edge_length(self) -> float:
        return self.resolution * self.cells

    @property
    def min_corner(self) -> np.ndarray:
        return np.asarray(self.origin, dtype=np.float64) - 0.5 * self.edge_length


@dataclass(frozen=True)
class VoxelState:
    """Leaf payload: clamped log-odds, label distribution, hit counter."""

    log_odds: float = 0.0
    semantics: SemanticDistribution = field(default=EMPTY_DISTRIBUTION)
    hit_count: int = 0


def update_voxel(v: VoxelState, observation: Observation, cfg: MapConfig) -> VoxelState:
    """One additive log-odds step, clamped to [l_min, l_max]."""
    p = cfg.p_hit if observation is Observation.HIT else cfg.p_miss
    l = v.log_odds + log_odds(p)
    l = min(cfg.l_max, max(cfg.l_min, l))
    hits = v.hit_count + (1 if observation is Observation.HIT else 0)
    return VoxelState(l, v.semantics, hits)


VoxelKey = tuple[int, int, int]


@dataclass
class InsertStats:
    """Per-frame insertion counts.

    ``out_of_range`` covers both pixels beyond the depth cutoff and points
    falling outside the addressable volume; ``freed_voxels`` counts voxels
    that received a carve miss.
    """

    inserted: int = 0
    skipped_zero_depth: int = 0
    out_of_range: int = 0
    freed_voxels: int = 0


@dataclass(frozen=True)
class FrameBatch:
    """Pure per-frame preprocessing output, ready for single-writer insertion.

    ``positions`` are world-frame endpoints in row-major pixel order;
    ``semantics`` and ``colors`` run parallel to them.
    """

    positions: np.ndarray
    colors: np.ndarray
    semantics: tuple[SemanticDistribution, ...]
    sensor_origin: np.ndarray
    skipped_zero_depth: int
    out_of_range: int


def extract_frame_points(
    frame: "LabeledFrame",
    k: CameraIntrinsics,
    sensor_pose: Pose,
    stride: int = 1,
    max_range: float = math.inf,
) -> FrameBatch:
    """Back-project every stride-th valid pixel into world points.

    Pixels with zero depth or metric depth beyond ``max_range`` are counted
    and skipped.  Raises DimensionMismatch when the rasters do not match
    the camera model.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    h, w = frame.depth.shape
    if (w, h) != (k.width, k.height) or frame.color.shape[:2] != (h, w):
        raise DimensionMismatch(
            f"frame is {w}x{h} with color {frame.color.shape[:2]}, camera expects {k.width}x{k.height}"
        )

    vs = np.arange(0, h, stride)
    us = np.arange(0, w, stride)
    vg, ug = np.meshgrid(vs, us, indexing="ij")
    vg = vg.ravel()
    ug = ug.ravel()

    raw = frame.depth[vg, ug].astype(np.float64)
    valid = raw > 0
    skipped = int(np.count_nonzero(~valid))
    depth = raw / k.depth_scale
    in_range = depth <= max_range
    out_of_range = int(np.count_nonzero(valid & ~in_range))
    sel = valid & in_range

    ug, vg, depth = ug[sel], vg[sel], depth[sel]
    p_cam = np.column_stack(
        [(ug - k.cx) * depth / k.fx, (vg - k.cy) * depth / k.fy, depth]
    )
    p_world = sensor_pose.apply(p_cam)

    rgb = frame.color[vg, ug].astype(np.int64)
    colors = (rgb[:, 0] << 16) | (rgb[:, 1] << 8) | rgb[:, 2]

    if frame.label_ids is None:
        semantics = (EMPTY_DISTRIBUTION,) * len(ug)
    else:
        ids = frame.label_ids[vg, ug]
        probs = frame.label_probs[vg, ug]
        semantics = tuple(
            from_pixel(
                [(int(l), float(p)) for l, p in zip(row_ids, row_probs) if l != UNLABELED]
            )
            for row_ids, row_probs in zip(ids, probs)
        )

    return FrameBatch(
        positions=p_world,
        colors=colors,
        semantics=semantics,
        sensor_origin=sensor_pose.translation,
        skipped_zero_depth=skipped,
        out_of_range=out_of_range,
    )


class SemanticOctree:
    """Origin-centered fixed-depth occupancy octree with semantic leaves.

    Inner nodes are plain 8-slot lists (children are ``None``, a nested
    list, or a :class:`VoxelState` leaf); a leaf above max depth stands
    for a pruned block of identical voxels and is expanded on demand.
    """

    def __init__(self, config: MapConfig | None = None, label_table: LabelTable | None = None):
        self.config = config or MapConfig()
        self.label_table = label_table
        self.root: list | VoxelState | None = None
        self.dropped_points = 0
        self._l_hit = log_odds(self.config.p_hit)
        self._l_miss = log_odds(self.config.p_miss)

    # ------------------------------------------------------------------
    # addressing
    # ------------------------------------------------------------------

    def key_of(self, position) -> VoxelKey | None:
        """Leaf grid index of a world position, or None outside the volume."""
        rel = (np.asarray(position, dtype=np.float64) - self.config.min_corner) / self.config.resolution
        ix, iy, iz = (int(math.floor(c)) for c in rel)
        n = self.config.cells
        if 0 <= ix < n and 0 <= iy < n and 0 <= iz < n:
            return (ix, iy, iz)
        return None

    def center_of(self, key: VoxelKey, depth: int | None = None) -> np.ndarray:
        """World center of the voxel (or coarser block) at ``key``.

        ``key`` holds max-depth indices of the block's minimum corner;
        ``depth`` defaults to a leaf at max depth.
        """
        if depth is None:
            depth = self.config.max_depth
        half_cells = 1 << (self.config.max_depth - depth - 1) if depth < self.config.max_depth else 0.5
        return self.config.min_corner + (np.asarray(key, dtype=np.float64) + half_cells) * self.config.resolution

    def _child_index(self, key: VoxelKey, depth: int) -> int:
        bit = self.config.max_depth - 1 - depth
        return ((key[0] >> bit) & 1) | (((key[1] >> bit) & 1) << 1) | (((key[2] >> bit) & 1) << 2)

    # ------------------------------------------------------------------
    # updates
    # ------------------------------------------------------------------

    def _update_leaf(self, key: VoxelKey, fn) -> None:
        """Apply ``fn(old_state_or_None) -> VoxelState`` at a max-depth leaf."""
        md = self.config.max_depth
        if self.root is None:
            self.root = [None] * 8
        elif isinstance(self.root, VoxelState):
            self.root = [self.root] * 8
        node = self.root
        for depth in range(md):
            idx = self._child_index(key, depth)
            child = node[idx]
            if depth == md - 1:
                node[idx] = fn(child)
                return
            if child is None:
                child = [None] * 8
                node[idx] = child
            elif isinstance(child, VoxelState):
                # pruned block: push the shared state down one level
                child = [child] * 8
                node[idx] = child
            node = child

    def update_at(self, position, observation: Observation) -> bool:
        """Apply one hit or miss update to the voxel containing ``position``.

        Returns False (and counts the drop) outside the addressable volume.
        Semantics are never touched by this path.
        """
        key = self.key_of(position)
        if key is None:
            self.dropped_points += 1
            return False
        self._update_key(key, observation)
        return True

    def _update_key(self, key: VoxelKey, observation: Observation) -> None:
        cfg = self.config
        delta = self._l_hit if observation is Observation.HIT else self._l_miss
        inc = 1 if observation is Observation.HIT else 0

        def bump(old: VoxelState | None) -> VoxelState:
            prev = old if old is not None else VoxelState()
            l = min(cfg.l_max, max(cfg.l_min, prev.log_odds + delta))
            return VoxelState(l, prev.semantics, prev.hit_count + inc)

        self._update_leaf(key, bump)

    def insert_point(self, point: SemanticPoint, sensor_origin=None) -> bool:
        """Hit-update the voxel containing the point and fuse its semantics.

        An empty voxel adopts the incoming distribution verbatim; an
        incoming empty distribution leaves the stored one untouched (a hit
        with no labels carries no label evidence).  Points outside the
        volume, or farther than ``max_range`` from ``sensor_origin`` when
        one is given, are dropped and counted.  Returns True on insertion.
        """
        if sensor_origin is not None and math.isfinite(self.config.max_range):
            dist = float(np.linalg.norm(point.position - np.asarray(sensor_origin, dtype=np.float64)))
            if dist > self.config.max_range:
                self.dropped_points += 1
                return False
        key = self.key_of(point.position)
        if key is None:
            self.dropped_points += 1
            return False
        self._insert_key(key, point.semantics)
        return True

    def _insert_key(self, key: VoxelKey, semantics: SemanticDistribution) -> None:
        cfg = self.config
        delta = self._l_hit

        def bump(old: VoxelState | None) -> VoxelState:
            if old is None:
                l = min(cfg.l_max, max(cfg.l_min, delta))
                return VoxelState(l, semantics, 1)
            l = min(cfg.l_max, max(cfg.l_min, old.log_odds + delta))
            if len(old.semantics) == 0:
                merged = semantics
            elif len(semantics) == 0:
                merged = old.semantics
            else:
                merged = fuse(old.semantics, semantics, cfg.fusion)
            return VoxelState(l, merged, old.hit_count + 1)

        self._update_leaf(key, bump)

    def insert_frame(
        self, sensor_pose: Pose, frame: "LabeledFrame", k: CameraIntrinsics, stride: int = 1
    ) -> InsertStats:
        """Insert one labeled RGB-D frame taken from ``sensor_pose``.

        Every stride-th pixel with valid depth within ``max_range`` becomes
        a world point inserted via :meth:`insert_point` in row-major order.
        With ``carve_free_space`` enabled, voxels crossed by the sensor ray
        before the endpoint receive one miss update per frame (voxels hit
        in the same frame are spared).
        """
        batch = extract_frame_points(frame, k, sensor_pose, stride, self.config.max_range)
        return self.insert_batch(batch)

    def insert_batch(self, batch: FrameBatch) -> InsertStats:
        stats = InsertStats(
            skipped_zero_depth=batch.skipped_zero_depth, out_of_range=batch.out_of_range
        )
        hit_keys: set[VoxelKey] = set()
        endpoints: list[np.ndarray] = []
        n = self.config.cells
        if len(batch.positions):
            grid = np.floor(
                (batch.positions - self.config.min_corner) / self.config.resolution
            ).astype(np.int64)
            in_bounds = np.all((grid >= 0) & (grid < n), axis=1)
        else:
            grid = np.empty((0, 3), dtype=np.int64)
            in_bounds = np.empty(0, dtype=bool)
        for pos, cell, ok, sem in zip(batch.positions, grid, in_bounds, batch.semantics):
            if not ok:
                self.dropped_points += 1
                stats.out_of_range += 1
                continue
            key = (int(cell[0]), int(cell[1]), int(cell[2]))
            self._insert_key(key, sem)
            stats.inserted += 1
            hit_keys.add(key)
            endpoints.append(pos)

        if self.config.carve_free_space and endpoints:
            free: set[VoxelKey] = set()
            for pos in endpoints:
                free.update(self._ray_keys(batch.sensor_origin, pos))
            free -= hit_keys
            for key in sorted(free):
                self._update_key(key, Observation.MISS)
            stats.freed_voxels = len(free)
        return stats

    def _ray_keys(self, a, b) -> Iterator[VoxelKey]:
        """In-bounds voxels crossed by segment a -> b, endpoint voxel excluded.

        Standard step-by-step grid traversal: starting in the voxel that
        contains ``a``, repeatedly advance across the nearest voxel face
        until the endpoint's voxel (or the end of the segment) is reached.
        """
        res = self.config.resolution
        mc = self.config.min_corner
        n = self.config.cells
        g0 = (np.asarray(a, dtype=np.float64) - mc) / res
        g1 = (np.asarray(b, dtype=np.float64) - mc) / res
        cur = [int(math.floor(c)) for c in g0]
        end = [int(math.floor(c)) for c in g1]
        if cur == end:
            return
        d = g1 - g0
        step = [0, 0, 0]
        t_max = [math.inf] * 3
        t_delta = [math.inf] * 3
        for i in range(3):
            if d[i] > 0:
                step[i] = 1
                t_max[i] = (cur[i] + 1 - g0[i]) / d[i]
                t_delta[i] = 1.0 / d[i]
            elif d[i] < 0:
                step[i] = -1
                t_max[i] = (cur[i] - g0[i]) / d[i]
                t_delta[i] = -1.0 / d[i]
        t = 0.0
        while cur != end and t <= 1.0:
            if 0 <= cur[0] < n and 0 <= cur[1] < n and 0 <= cur[2] < n:
                yield (cur[0], cur[1], cur[2])
            axis = 0
            if t_max[1] < t_max[axis]:
                axis = 1
            if t_max[2] < t_max[axis]:
                axis = 2
            t = t_max[axis]
            cur[axis] += step[axis]
            t_max[axis] += t_delta[axis]

    # ------------------------------------------------------------------
    # queries
    # ------------------------------------------------------------------

    def _leaf_at(self, position) -> VoxelState | None:
        key = self.key_of(position)
        if key is None:
            return None
        node = self.root
        depth = 0
        while node is not None:
            if isinstance(node, VoxelState):
                return node
            node = node[self._child_index(key, depth)]
            depth += 1
        return None

    def occupancy_at(self, position) -> float:
        """Occupancy probability at a world position; 0.5 when unobserved."""
        leaf = self._leaf_at(position)
        if leaf is None:
            return 0.5
        return inverse_log_odds(leaf.log_odds)

    def label_at(self, position) -> tuple[int, float] | None:
        """Most probable (label, prob) of the containing voxel, if observed."""
        leaf = self._leaf_at(position)
        if leaf is None:
            return None
        return argmax_label(leaf.semantics)

    def iterate_leaves(self) -> Iterator[tuple[VoxelKey, int, VoxelState]]:
        """Deterministic pre-order stream of (min-corner key, depth, state)."""
        md = self.config.max_depth

        def rec(node, depth, ix, iy, iz):
            if isinstance(node, VoxelState):
                yield (ix, iy, iz), depth, node
                return
            bit = md - 1 - depth
            for i in range(8):
                child = node[i]
                if child is not None:
                    yield from rec(
                        child,
                        depth + 1,
                        ix | ((i & 1) << bit),
                        iy | (((i >> 1) & 1) << bit),
                        iz | (((i >> 2) & 1) << bit),
                    )

        if self.root is not None:
            yield from rec(self.root, 0, 0, 0, 0)

    def leaf_count(self) -> int:
        return sum(1 for _ in self.iterate_leaves())

    # ------------------------------------------------------------------
    # pruning
    # ------------------------------------------------------------------

    def prune(self) -> None:
        """Collapse any 8 identical sibling leaves into one coarser leaf.

        Identity means exact equality of clamped log-odds and semantics;
        hit counts are summed into the collapsed leaf.  Queries are
        unchanged by construction.
        """

        def rec(node: list):
            for i in range(8):
                child = node[i]
                if isinstance(child, list):
                    node[i] = rec(child)
            first = node[0]
            if not isinstance(first, VoxelState):
                return node
            for child in node[1:]:
                if (
                    not isinstance(child, VoxelState)
                    or child.log_odds != first.log_odds
                    or child.semantics != first.semantics
                ):
                    return node
            hits = sum(c.hit_count for c in node)
            return VoxelState(first.log_odds, first.semantics, min(hits, 0xFFFFFFFF))

        if isinstance(self.root, list):
            self.root = rec(self.root)

    # ------------------------------------------------------------------
    # serialization
    # ------------------------------------------------------------------

    def serialize(self) -> bytes:
        """Encode the map in the little-endian `.s3m` layout."""
        cfg = self.config
        out = bytearray()
        out += MAGIC
        out += struct.pack("<I", FORMAT_VERSION)
        out += struct.pack("<d", cfg.resolution)
        out += struct.pack("<3d", *cfg.origin)
        out += struct.pack("<B", cfg.max_depth)
        out += struct.pack("<2f", cfg.l_min, cfg.l_max)
        if self.label_table is None:
            out += struct.pack("<I", 0)
        else:
            out += struct.pack("<I", len(self.label_table))
            for name, color in zip(self.label_table.names, self.label_table.colors):
                raw = name.encode("utf-8")
                out += struct.pack("<H", len(raw))
                out += raw
                out += struct.pack("<3B", *color)
        if self.root is None:
            out += struct.pack("<B", 0)
        else:
            out += struct.pack("<B", 1)
            self._write_node(out, self.root)
        return bytes(out)

    def _write_node(self, out: bytearray, node) -> None:
        if isinstance(node, VoxelState):
            entries = node.semantics.entries
            if len(entries) > 255:
                raise ValueError("voxel carries more than 255 semantic entries")
            out += struct.pack("<Bf B", 0, node.log_odds, len(entries))
            for label, prob in entries:
                out += struct.pack("<Hf", label, prob)
            out += struct.pack("<I", min(node.hit_count, 0xFFFFFFFF))
            return
        mask = 0
        for i in range(8):
            if node[i] is not None:
                mask |= 1 << i
        out += struct.pack("<B", mask)
        for i in range(8):
            if node[i] is not None:
                self._write_node(out, node[i])

    @staticmethod
    def deserialize(data: bytes) -> "SemanticOctree":
        """Decode a `.s3m` byte stream; the inverse of :meth:`serialize`."""
        r = _Reader(data)
        if len(data) < len(MAGIC):
            raise TruncatedStream("stream shorter than the magic header")
        if r.take(len(MAGIC)) != MAGIC:
            raise BadMagic("not a semantic map stream")
        (version,) = r.unpack("<I")
        if version != FORMAT_VERSION:
            raise UnsupportedVersion(f"version {version}, expected {FORMAT_VERSION}")
        (resolution,) = r.unpack("<d")
        origin = r.unpack("<3d")
        (max_depth,) = r.unpack("<B")
        l_min, l_max = r.unpack("<2f")
        (n_labels,) = r.unpack("<I")
        table = None
        if n_labels:
            names, colors = [], []
            for _ in range(n_labels):
                (ln,) = r.unpack("<H")
                names.append(r.take(ln).decode("utf-8"))
                colors.append(r.unpack("<3B"))
            try:
                table = LabelTable(tuple(names), tuple(colors))
            except ValueError as e:
                raise CorruptNode(f"bad label table: {e}") from e
        try:
            cfg = MapConfig(
                resolution=resolution,
                max_depth=max_depth,
                origin=origin,
                l_min=float(l_min),
                l_max=float(l_max),
            )
        except ValueError as e:
            raise CorruptNode(f"bad map header: {e}") from e
        tree = SemanticOctree(cfg, table)
        (has_root,) = r.unpack("<B")
        if has_root not in (0, 1):
            raise CorruptNode(f"bad root marker {has_root}")
        if has_root:
            tree.root = _read_node(r, 0, max_depth)
        if r.remaining():
            raise CorruptNode(f"{r.remaining()} trailing bytes after the root node")
        return tree

    # ------------------------------------------------------------------
    # export
    # ------------------------------------------------------------------

    def export_ply(self, path, threshold: float | None = None) -> int:
        """Write occupied leaf centers as an ASCII PLY point cloud.

        One vertex per leaf with occupancy strictly above the threshold
        (map default when None): position, argmax-label color, label id,
        and confidence.  Leaves without semantics export the sentinel
        label 0xFFFF in gray.  Returns the vertex count.
        """
        thr = self.config.occupancy_threshold if threshold is None else threshold
        rows = []
        for key, depth, state in self.iterate_leaves():
            if inverse_log_odds(state.log_odds) <= thr:
                continue
            cx, cy, cz = self.center_of(key, depth)
            best = argmax_label(state.semantics)
            if best is None:
                label, conf, color = UNLABELED, 0.0, (128, 128, 128)
            else:
                label, conf = best
                color = (
                    self.label_table.color_of(label)
                    if self.label_table is not None
                    else (128, 128, 128)
                )
            rows.append(
                f"{cx:.6f} {cy:.6f} {cz:.6f} {color[0]} {color[1]} {color[2]} {label} {conf:.6f}"
            )
        with open(path, "w", encoding="ascii") as f:
            f.write("ply\nformat ascii 1.0\n")
            f.write(f"element vertex {len(rows)}\n")
            f.write("property float x\nproperty float y\nproperty float z\n")
            f.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
            f.write("property ushort label\nproperty float confidence\n")
            f.write("end_header\n")
            for row in rows:
                f.write(row + "\n")
        return len(rows)


class _Reader:
    __slots__ = ("data", "pos")

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedStream(f"needed {n} bytes at offset {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def remaining(self) -> int:
        return len(self.data) - self.pos


def _read_node(r: _Reader, depth: int, max_depth: int):
    (mask,) = r.unpack("<B")
    if mask == 0:
        (l,) = r.unpack("<f")
        if not math.isfinite(l):
            raise CorruptNode(f"non-finite log-odds at offset {r.pos}")
        (n,) = r.unpack("<B")
        entries = []
        for _ in range(n):
            label, prob = r.unpack("<Hf")
            entries.append((label, float(prob)))
        (hits,) = r.unpack("<I")
        try:
            semantics = SemanticDistribution(tuple(entries))
        except ValueError as e:
            raise CorruptNode(f"bad leaf semantics at offset {r.pos}: {e}") from e
        return VoxelState(float(l), semantics, hits)
    if depth >= max_depth:
        raise CorruptNode(f"inner node below max depth at offset {r.pos}")
    node = [None] * 8
    for i in range(8):
        if mask & (1 << i):
            node[i] = _read_node(r, depth + 1, max_depth)
    return node
