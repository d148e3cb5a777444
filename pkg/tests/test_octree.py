"""Occupancy octree tests.

Two independent oracles anchor this module: a brute-force dense voxel
array applying the additive clamped log-odds update for occupancy, and an
analytic plane-crossing enumeration for ray traversal (every grid-plane
intersection parameter is computed, and the midpoint between consecutive
crossings samples exactly one voxel of the crossing sequence).
"""

import math

import numpy as np
import pytest

from semmap.geom import CameraIntrinsics, Pose
from semmap.ingest import LabeledFrame
from semmap.octree import (
    BadMagic,
    CorruptNode,
    DimensionMismatch,
    MapConfig,
    Observation,
    ProbabilityOutOfRange,
    SemanticOctree,
    TruncatedStream,
    UnsupportedVersion,
    VoxelState,
    inverse_log_odds,
    log_odds,
    update_voxel,
)
from semmap.semantic import EMPTY_DISTRIBUTION, LabelTable, SemanticDistribution, SemanticPoint

L_HIT = math.log(0.7 / 0.3)
L_MISS = math.log(0.4 / 0.6)


def dist(*pairs) -> SemanticDistribution:
    return SemanticDistribution(tuple(sorted((int(l), float(p)) for l, p in pairs)))


def small_config(**kw) -> MapConfig:
    base = dict(resolution=0.5, max_depth=4, origin=(0.0, 0.0, 0.0))
    base.update(kw)
    return MapConfig(**base)


class TestLogOdds:
    def test_half_is_zero(self):
        assert log_odds(0.5) == 0.0

    def test_values(self):
        assert abs(log_odds(0.7) - math.log(7 / 3)) < 1e-15
        assert abs(log_odds(0.4) - math.log(2 / 3)) < 1e-15

    def test_inverse(self):
        rng = np.random.default_rng(31)
        for p in rng.uniform(1e-6, 1 - 1e-6, size=500):
            assert abs(inverse_log_odds(log_odds(p)) - p) < 1e-12

    def test_out_of_range(self):
        for p in (0.0, 1.0, -0.2, 1.5):
            with pytest.raises(ProbabilityOutOfRange):
                log_odds(p)


class TestUpdateVoxel:
    def test_hit_from_prior(self):
        cfg = small_config()
        v = update_voxel(VoxelState(), Observation.HIT, cfg)
        assert abs(v.log_odds - L_HIT) < 1e-12
        assert v.hit_count == 1

    def test_miss_from_prior(self):
        cfg = small_config()
        v = update_voxel(VoxelState(), Observation.MISS, cfg)
        assert abs(v.log_odds - L_MISS) < 1e-12
        assert v.hit_count == 0

    def test_clamp_binds(self):
        cfg = small_config(l_max=3.5)
        v = update_voxel(VoxelState(log_odds=3.4), Observation.HIT, cfg)
        assert v.log_odds == 3.5


class TestInsertPoint:
    def test_first_observation(self):
        tree = SemanticOctree(small_config())
        sem = dist((0, 0.9))
        assert tree.insert_point(SemanticPoint(np.array([0.1, 0.1, 0.1]), semantics=sem))
        leaves = list(tree.iterate_leaves())
        assert len(leaves) == 1
        _, depth, state = leaves[0]
        assert depth == tree.config.max_depth
        assert abs(state.log_odds - L_HIT) < 1e-12
        assert state.semantics == sem

    def test_repeat_same_semantics(self):
        tree = SemanticOctree(small_config())
        pt = SemanticPoint(np.array([0.1, 0.1, 0.1]), semantics=dist((0, 0.9)))
        tree.insert_point(pt)
        tree.insert_point(pt)
        leaves = list(tree.iterate_leaves())
        assert len(leaves) == 1
        state = leaves[0][2]
        assert abs(state.log_odds - 2 * L_HIT) < 1e-12
        assert state.semantics == pt.semantics
        assert state.hit_count == 2

    def test_two_voxels(self):
        tree = SemanticOctree(small_config())
        tree.insert_point(SemanticPoint(np.array([0.1, 0.1, 0.1])))
        tree.insert_point(SemanticPoint(np.array([1.1, 0.1, 0.1])))
        assert tree.leaf_count() == 2

    def test_out_of_bounds_counted(self):
        tree = SemanticOctree(small_config())
        assert not tree.insert_point(SemanticPoint(np.array([100.0, 0.0, 0.0])))
        assert tree.dropped_points == 1
        assert tree.leaf_count() == 0

    def test_max_range_with_origin(self):
        tree = SemanticOctree(small_config(max_range=1.0))
        far = SemanticPoint(np.array([1.8, 0.0, 0.0]))
        assert not tree.insert_point(far, sensor_origin=np.zeros(3))
        assert tree.insert_point(far)  # no origin, no range check
        assert tree.dropped_points == 1

    def test_empty_voxel_adopts_incoming(self):
        tree = SemanticOctree(small_config())
        pos = np.array([0.1, 0.1, 0.1])
        tree.update_at(pos, Observation.MISS)  # leaf exists, no semantics
        tree.insert_point(SemanticPoint(pos, semantics=dist((2, 0.8))))
        assert tree.label_at(pos) == (2, 0.8)

    def test_empty_incoming_keeps_semantics(self):
        tree = SemanticOctree(small_config())
        pos = np.array([0.1, 0.1, 0.1])
        tree.insert_point(SemanticPoint(pos, semantics=dist((2, 0.8))))
        tree.insert_point(SemanticPoint(pos))
        assert tree.label_at(pos) == (2, 0.8)


class TestQueries:
    def test_unobserved_prior(self):
        tree = SemanticOctree(small_config())
        assert tree.occupancy_at([0.1, 0.1, 0.1]) == 0.5
        assert tree.occupancy_at([999.0, 0.0, 0.0]) == 0.5
        assert tree.label_at([0.1, 0.1, 0.1]) is None

    def test_one_hit(self):
        tree = SemanticOctree(small_config())
        tree.insert_point(SemanticPoint(np.array([0.1, 0.1, 0.1])))
        assert abs(tree.occupancy_at([0.1, 0.1, 0.1]) - 0.7) < 1e-12

    def test_two_hits(self):
        tree = SemanticOctree(small_config())
        for _ in range(2):
            tree.insert_point(SemanticPoint(np.array([0.1, 0.1, 0.1])))
        # logistic(2 ln(7/3)) = 49/58
        assert abs(tree.occupancy_at([0.1, 0.1, 0.1]) - 49.0 / 58.0) < 1e-12

    def test_label_from_fusion(self):
        tree = SemanticOctree(small_config())
        pos = np.array([0.1, 0.1, 0.1])
        tree.insert_point(SemanticPoint(pos, semantics=dist((0, 0.6))))
        tree.insert_point(SemanticPoint(pos, semantics=dist((0, 0.5), (1, 0.3))))
        label, prob = tree.label_at(pos)
        assert label == 0
        assert abs(prob - 5.0 / 6.0) < 1e-9


def brute_force_occupancy(updates, cfg: MapConfig, shape):
    """Dense-array Bayes update oracle in the probability domain."""
    grid = np.zeros(shape)
    for (i, j, k), obs in updates:
        delta = log_odds(cfg.p_hit if obs is Observation.HIT else cfg.p_miss)
        grid[i, j, k] = min(cfg.l_max, max(cfg.l_min, grid[i, j, k] + delta))
    return 1.0 / (1.0 + np.exp(-grid))


class TestDenseOracle:
    def test_matches_brute_force(self):
        n = 16
        cfg = MapConfig(resolution=1.0, max_depth=4, origin=(n / 2, n / 2, n / 2))
        tree = SemanticOctree(cfg)
        rng = np.random.default_rng(33)
        updates = []
        for _ in range(3000):
            cell = tuple(int(c) for c in rng.integers(0, n, size=3))
            obs = Observation.HIT if rng.random() < 0.5 else Observation.MISS
            updates.append((cell, obs))
            assert tree.update_at(np.asarray(cell) + 0.5, obs)
        expected = brute_force_occupancy(updates, cfg, (n, n, n))
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    got = tree.occupancy_at((i + 0.5, j + 0.5, k + 0.5))
                    assert abs(got - expected[i, j, k]) < 1e-9

    def test_order_independence(self):
        cfg = small_config()
        rng = np.random.default_rng(34)
        points = [SemanticPoint(rng.uniform(-3, 3, size=3), semantics=dist((1, 0.9))) for _ in range(60)]
        trees = []
        for perm_seed in range(3):
            order = np.random.default_rng(perm_seed).permutation(len(points))
            tree = SemanticOctree(cfg)
            for idx in order:
                tree.insert_point(points[idx])
            trees.append(tree)
        ref = {key: state.log_odds for key, _, state in trees[0].iterate_leaves()}
        for tree in trees[1:]:
            got = {key: state.log_odds for key, _, state in tree.iterate_leaves()}
            assert got.keys() == ref.keys()
            for key in ref:
                assert abs(got[key] - ref[key]) < 1e-9

    def test_voxel_semantics_stay_valid(self):
        rng = np.random.default_rng(42)
        tree = SemanticOctree(small_config())
        for _ in range(1500):
            pos = rng.uniform(-3.9, 3.9, size=3)
            n = int(rng.integers(1, 4))
            ids = rng.choice(6, size=n, replace=False)
            probs = rng.random(n)
            probs = probs / probs.sum() * rng.uniform(0.3, 1.0)
            sem = dist(*zip(ids.tolist(), probs.tolist()))
            tree.insert_point(SemanticPoint(pos, semantics=sem))
        for _, _, state in tree.iterate_leaves():
            entries = state.semantics.entries
            ids = [l for l, _ in entries]
            assert ids == sorted(set(ids))
            assert all(0.0 <= p <= 1.0 for _, p in entries)
            assert sum(p for _, p in entries) <= 1.0 + 1e-9
            assert len(entries) <= tree.config.fusion.k_max

    def test_clamping_always_holds(self):
        cfg = small_config(l_min=-1.0, l_max=2.0)
        tree = SemanticOctree(cfg)
        rng = np.random.default_rng(35)
        for _ in range(2000):
            pos = rng.uniform(-3.9, 3.9, size=3)
            obs = Observation.HIT if rng.random() < 0.5 else Observation.MISS
            tree.update_at(pos, obs)
        for _, _, state in tree.iterate_leaves():
            assert cfg.l_min <= state.log_odds <= cfg.l_max


def crossing_oracle(tree: SemanticOctree, a, b):
    """Exact traversal oracle: sample the midpoint between consecutive
    grid-plane crossings of the segment; skip the endpoint's voxel."""
    res = tree.config.resolution
    mc = tree.config.min_corner
    g0 = (np.asarray(a, dtype=float) - mc) / res
    g1 = (np.asarray(b, dtype=float) - mc) / res
    d = g1 - g0
    ts = {0.0, 1.0}
    for axis in range(3):
        if d[axis] == 0.0:
            continue
        lo, hi = sorted((g0[axis], g1[axis]))
        for plane in range(math.ceil(lo), math.floor(hi) + 1):
            t = (plane - g0[axis]) / d[axis]
            if 0.0 < t < 1.0:
                ts.add(t)
    ts = sorted(ts)
    end_key = tuple(int(math.floor(c)) for c in g1)
    n = tree.config.cells
    keys = []
    for t0, t1 in zip(ts, ts[1:]):
        mid = g0 + 0.5 * (t0 + t1) * d
        key = tuple(int(math.floor(c)) for c in mid)
        if key == end_key:
            continue
        if all(0 <= c < n for c in key):
            keys.append(key)
    return set(keys)


class TestRayTraversal:
    def test_matches_crossing_oracle(self):
        tree = SemanticOctree(small_config())
        rng = np.random.default_rng(36)
        for _ in range(300):
            a = rng.uniform(-3.7, 3.7, size=3)
            b = rng.uniform(-3.7, 3.7, size=3)
            got = set(tree._ray_keys(a, b))
            assert got == crossing_oracle(tree, a, b)

    def test_axis_aligned(self):
        tree = SemanticOctree(small_config())
        keys = list(tree._ray_keys(np.zeros(3), np.array([0.0, 0.0, 2.0])))
        assert keys == [(8, 8, 8), (8, 8, 9), (8, 8, 10), (8, 8, 11)]

    def test_same_voxel_yields_nothing(self):
        tree = SemanticOctree(small_config())
        assert list(tree._ray_keys(np.zeros(3), np.array([0.1, 0.1, 0.1]))) == []


def one_pixel_frame(raw_depth: int) -> tuple[LabeledFrame, CameraIntrinsics]:
    k = CameraIntrinsics(fx=1.0, fy=1.0, cx=0.0, cy=0.0, width=1, height=1, depth_scale=1000.0)
    frame = LabeledFrame(
        timestamp=0.0,
        color=np.zeros((1, 1, 3), dtype=np.uint8),
        depth=np.full((1, 1), raw_depth, dtype=np.uint16),
    )
    return frame, k


class TestInsertFrame:
    def test_all_zero_depth(self):
        tree = SemanticOctree(small_config())
        frame, k = one_pixel_frame(0)
        stats = tree.insert_frame(Pose.identity(), frame, k)
        assert stats.inserted == 0
        assert stats.skipped_zero_depth == 1
        assert tree.leaf_count() == 0

    def test_single_pixel_endpoint(self):
        tree = SemanticOctree(small_config())
        frame, k = one_pixel_frame(2000)  # 2 m on the optical axis
        stats = tree.insert_frame(Pose.identity(), frame, k)
        assert stats.inserted == 1
        leaves = list(tree.iterate_leaves())
        assert len(leaves) == 1
        key = leaves[0][0]
        np.testing.assert_allclose(tree.center_of(key), [0.25, 0.25, 2.25])
        assert abs(leaves[0][2].log_odds - L_HIT) < 1e-12

    def test_carving_along_segment(self):
        tree = SemanticOctree(small_config(carve_free_space=True))
        frame, k = one_pixel_frame(2000)
        stats = tree.insert_frame(Pose.identity(), frame, k)
        assert stats.freed_voxels == 4
        for z in (0.25, 0.75, 1.25, 1.75):
            leaf_p = tree.occupancy_at((0.25, 0.25, z))
            assert abs(leaf_p - 0.4) < 1e-12
        assert abs(tree.occupancy_at((0.25, 0.25, 2.25)) - 0.7) < 1e-12

    def test_hit_beats_miss_within_frame(self):
        # two pixels land in the same voxel column: the endpoint voxel of one
        # ray must not be carved by the other
        k = CameraIntrinsics(fx=10.0, fy=10.0, cx=0.5, cy=0.5, width=2, height=1, depth_scale=1000.0)
        depth = np.array([[2000, 2000]], dtype=np.uint16)
        frame = LabeledFrame(
            timestamp=0.0, color=np.zeros((1, 2, 3), dtype=np.uint8), depth=depth
        )
        tree = SemanticOctree(small_config(carve_free_space=True))
        tree.insert_frame(Pose.identity(), frame, k)
        for _, _, state in tree.iterate_leaves():
            if state.hit_count > 0:
                assert state.log_odds > 0

    def test_dimension_mismatch(self):
        tree = SemanticOctree(small_config())
        frame, _ = one_pixel_frame(1000)
        wrong_k = CameraIntrinsics(fx=1.0, fy=1.0, cx=0.0, cy=0.0, width=2, height=2, depth_scale=1000.0)
        with pytest.raises(DimensionMismatch):
            tree.insert_frame(Pose.identity(), frame, wrong_k)

    def test_beyond_max_range_skipped(self):
        tree = SemanticOctree(small_config(max_range=1.0))
        frame, k = one_pixel_frame(2000)
        stats = tree.insert_frame(Pose.identity(), frame, k)
        assert stats.inserted == 0
        assert stats.out_of_range == 1


class TestPrune:
    def test_single_leaf_unchanged(self):
        tree = SemanticOctree(small_config())
        tree.insert_point(SemanticPoint(np.array([0.1, 0.1, 0.1])))
        tree.prune()
        assert tree.leaf_count() == 1

    def test_collapses_identical_siblings(self):
        cfg = small_config(l_max=3.5)
        tree = SemanticOctree(cfg)
        sem = dist((3, 0.9))
        centers = []
        # fill one depth-3 block: voxel indices (0|1)^3 offset to the block at key (8,8,8)
        for dx in range(2):
            for dy in range(2):
                for dz in range(2):
                    c = np.array([0.25 + 0.5 * dx, 0.25 + 0.5 * dy, 0.25 + 0.5 * dz])
                    centers.append(c)
                    for _ in range(20):  # saturate at l_max
                        tree.insert_point(SemanticPoint(c, semantics=sem))
        before = [(tree.occupancy_at(c), tree.label_at(c)) for c in centers]
        assert tree.leaf_count() == 8
        tree.prune()
        leaves = list(tree.iterate_leaves())
        assert len(leaves) == 1
        assert leaves[0][1] == tree.config.max_depth - 1
        after = [(tree.occupancy_at(c), tree.label_at(c)) for c in centers]
        assert after == before

    def test_differing_sibling_blocks_collapse(self):
        tree = SemanticOctree(small_config())
        for dx in range(2):
            for dy in range(2):
                for dz in range(2):
                    c = np.array([0.25 + 0.5 * dx, 0.25 + 0.5 * dy, 0.25 + 0.5 * dz])
                    sem = dist((0, 0.9)) if (dx, dy, dz) != (1, 1, 1) else dist((1, 0.9))
                    for _ in range(20):
                        tree.insert_point(SemanticPoint(c, semantics=sem))
        tree.prune()
        assert tree.leaf_count() == 8

    def test_prune_soundness_random(self):
        rng = np.random.default_rng(37)
        for trial in range(20):
            cfg = small_config(l_min=-1.0, l_max=1.5)
            tree = SemanticOctree(cfg)
            for _ in range(rng.integers(1, 400)):
                pos = rng.uniform(-3.9, 3.9, size=3)
                if rng.random() < 0.7:
                    tree.insert_point(SemanticPoint(pos, semantics=dist((int(rng.integers(0, 3)), 0.9))))
                else:
                    tree.update_at(pos, Observation.MISS)
            probes = [rng.uniform(-4.2, 4.2, size=3) for _ in range(200)]
            before = [(tree.occupancy_at(p), tree.label_at(p)) for p in probes]
            count_before = tree.leaf_count()
            tree.prune()
            after = [(tree.occupancy_at(p), tree.label_at(p)) for p in probes]
            assert after == before
            assert tree.leaf_count() <= count_before

    def test_cascading_collapse(self):
        # a full 4x4x4 block of identical voxels collapses two levels
        tree = SemanticOctree(small_config())
        for dx in range(4):
            for dy in range(4):
                for dz in range(4):
                    c = np.array([0.25 + 0.5 * dx, 0.25 + 0.5 * dy, 0.25 + 0.5 * dz])
                    tree.insert_point(SemanticPoint(c, semantics=dist((1, 0.9))))
        assert tree.leaf_count() == 64
        tree.prune()
        leaves = list(tree.iterate_leaves())
        assert len(leaves) == 1
        assert leaves[0][1] == tree.config.max_depth - 2
        assert leaves[0][2].hit_count == 64

    def test_insert_after_prune_expands(self):
        cfg = small_config()
        tree = SemanticOctree(cfg)
        for dx in range(2):
            for dy in range(2):
                for dz in range(2):
                    c = np.array([0.25 + 0.5 * dx, 0.25 + 0.5 * dy, 0.25 + 0.5 * dz])
                    tree.insert_point(SemanticPoint(c))
        tree.prune()
        assert tree.leaf_count() == 1
        tree.insert_point(SemanticPoint(np.array([0.25, 0.25, 0.25])))
        # the updated voxel now differs from its 7 siblings
        assert tree.leaf_count() == 8
        assert abs(tree.occupancy_at([0.25, 0.25, 0.25]) - inverse_log_odds(2 * L_HIT)) < 1e-12
        assert abs(tree.occupancy_at([0.75, 0.25, 0.25]) - 0.7) < 1e-12


class TestIterateLeaves:
    def test_empty(self):
        assert list(SemanticOctree(small_config()).iterate_leaves()) == []

    def test_deterministic_order(self):
        rng = np.random.default_rng(38)
        tree = SemanticOctree(small_config())
        for _ in range(100):
            tree.insert_point(SemanticPoint(rng.uniform(-3.9, 3.9, size=3)))
        first = list(tree.iterate_leaves())
        second = list(tree.iterate_leaves())
        assert first == second
        keys = [k for k, _, _ in first]
        assert len(set(keys)) == len(keys)


def random_tree(rng, with_labels=True) -> SemanticOctree:
    table = LabelTable(("wall", "chair", "table"), ((200, 200, 200), (255, 0, 0), (0, 0, 255))) if with_labels else None
    cfg = small_config(l_min=-1.5, l_max=2.5)
    tree = SemanticOctree(cfg, table)
    for _ in range(rng.integers(0, 300)):
        pos = rng.uniform(-3.9, 3.9, size=3)
        if rng.random() < 0.8:
            n = int(rng.integers(1, 3))
            ids = rng.choice(3, size=n, replace=False)
            probs = rng.random(n)
            probs = probs / probs.sum() * rng.uniform(0.3, 1.0)
            sem = dist(*zip(ids.tolist(), probs.tolist()))
            tree.insert_point(SemanticPoint(pos, semantics=sem))
        else:
            tree.update_at(pos, Observation.MISS)
    if rng.random() < 0.5:
        tree.prune()
    return tree


class TestSerialization:
    def test_empty_round_trip(self):
        tree = SemanticOctree(small_config())
        data = tree.serialize()
        tree2 = SemanticOctree.deserialize(data)
        assert tree2.serialize() == data
        assert tree2.leaf_count() == 0

    def test_round_trip_fixed_point(self):
        rng = np.random.default_rng(39)
        for _ in range(20):
            tree = random_tree(rng)
            data = tree.serialize()
            tree2 = SemanticOctree.deserialize(data)
            assert tree2.serialize() == data

    def test_queries_survive_f32(self):
        rng = np.random.default_rng(40)
        tree = SemanticOctree(small_config())
        for _ in range(1000):
            pos = rng.uniform(-3.9, 3.9, size=3)
            tree.insert_point(SemanticPoint(pos, semantics=dist((int(rng.integers(0, 4)), 0.9))))
        tree2 = SemanticOctree.deserialize(tree.serialize())
        for key, depth, state in tree.iterate_leaves():
            center = tree.center_of(key, depth)
            p1, p2 = tree.occupancy_at(center), tree2.occupancy_at(center)
            assert abs(p1 - p2) <= 1e-6 * max(1.0, abs(p1))
            l1, l2 = tree.label_at(center), tree2.label_at(center)
            assert (l1 is None) == (l2 is None)
            if l1 is not None:
                assert l1[0] == l2[0]
                assert abs(l1[1] - l2[1]) <= 1e-6

    def test_bad_magic(self):
        with pytest.raises(BadMagic):
            SemanticOctree.deserialize(b"NOTAMAP0" + b"\x00" * 64)

    def test_truncated(self):
        data = SemanticOctree(small_config()).serialize()
        with pytest.raises(TruncatedStream):
            SemanticOctree.deserialize(data[:20])
        with pytest.raises(TruncatedStream):
            SemanticOctree.deserialize(data[:4])

    def test_unsupported_version(self):
        data = bytearray(SemanticOctree(small_config()).serialize())
        data[8] = 99
        with pytest.raises(UnsupportedVersion):
            SemanticOctree.deserialize(bytes(data))

    def test_trailing_garbage(self):
        data = SemanticOctree(small_config()).serialize()
        with pytest.raises(CorruptNode):
            SemanticOctree.deserialize(data + b"\x00")

    def test_label_table_round_trip(self):
        rng = np.random.default_rng(41)
        tree = random_tree(rng, with_labels=True)
        tree2 = SemanticOctree.deserialize(tree.serialize())
        assert tree2.label_table == tree.label_table

    def test_fully_collapsed_root_round_trip(self):
        # a 1-level tree whose 8 voxels are identical prunes to a root leaf
        tree = SemanticOctree(MapConfig(resolution=1.0, max_depth=1))
        sem = dist((1, 0.9))
        for dx in (-0.5, 0.5):
            for dy in (-0.5, 0.5):
                for dz in (-0.5, 0.5):
                    tree.insert_point(SemanticPoint(np.array([dx, dy, dz]), semantics=sem))
        tree.prune()
        assert isinstance(tree.root, VoxelState)
        data = tree.serialize()
        back = SemanticOctree.deserialize(data)
        assert back.serialize() == data
        assert abs(back.occupancy_at([0.5, 0.5, 0.5]) - tree.occupancy_at([0.5, 0.5, 0.5])) < 1e-6
        # updating one voxel of the collapsed root expands it again
        tree.insert_point(SemanticPoint(np.array([0.5, 0.5, 0.5]), semantics=sem))
        assert tree.leaf_count() == 8

    def test_f32_rounding_of_full_distribution_survives(self):
        # three exact thirds round up in f32; the reader must tolerate the
        # ~3e-8 sum overshoot a valid file can carry
        tree = SemanticOctree(small_config())
        sem = dist((0, 1 / 3), (1, 1 / 3), (2, 1 / 3))
        tree.insert_point(SemanticPoint(np.array([0.1, 0.1, 0.1]), semantics=sem))
        data = tree.serialize()
        tree2 = SemanticOctree.deserialize(data)
        assert tree2.serialize() == data


class TestExportPly:
    def test_empty_map(self, tmp_path):
        tree = SemanticOctree(small_config())
        path = tmp_path / "out.ply"
        assert tree.export_ply(path) == 0
        text = path.read_text()
        assert text.startswith("ply\n")
        assert "element vertex 0" in text

    def test_single_leaf(self, tmp_path):
        table = LabelTable(("wall", "chair"), ((200, 200, 200), (255, 0, 0)))
        tree = SemanticOctree(small_config(), table)
        tree.insert_point(SemanticPoint(np.array([0.1, 0.1, 0.1]), semantics=dist((1, 0.9))))
        path = tmp_path / "out.ply"
        assert tree.export_ply(path) == 1
        last = path.read_text().strip().splitlines()[-1]
        assert last == "0.250000 0.250000 0.250000 255 0 0 1 0.900000"

    def test_threshold_filters(self, tmp_path):
        tree = SemanticOctree(small_config())
        tree.insert_point(SemanticPoint(np.array([0.1, 0.1, 0.1])))  # p = 0.7
        assert tree.export_ply(tmp_path / "a.ply", threshold=0.99) == 0
        assert tree.export_ply(tmp_path / "b.ply", threshold=0.5) == 1
