import numpy as np
import pytest

from ragcn.errors import DisconnectedGraph, InvalidEdge, InvalidSpec
from ragcn.skeleton import (
    BASE_POSE, LEG_JOINTS, LEFT_ARM_JOINTS, NTU_BONES, SequenceTensor,
    SynthSpec, build_graph, generate_synthetic_dataset, ntu25_graph,
    validate_sequence,
)


def bfs_components(num_joints, edges):
    """Independent reachability oracle (adjacency-set BFS)."""
    adj = {v: set() for v in range(num_joints)}
    for i, j in edges:
        adj[i].add(j)
        adj[j].add(i)
    seen = {0}
    frontier = [0]
    while frontier:
        frontier = [w for v in frontier for w in adj[v] - seen]
        seen.update(frontier)
    return seen


class TestBuildGraph:
    def test_three_joint_chain(self):
        g = build_graph(3, [(0, 1), (1, 2)], 1)
        assert g.num_joints == 3
        assert g.center_joint == 1

    def test_out_of_range_edge(self):
        with pytest.raises(InvalidEdge):
            build_graph(3, [(0, 3)], 0)

    def test_self_loop(self):
        with pytest.raises(InvalidEdge):
            build_graph(3, [(0, 0), (0, 1), (1, 2)], 0)

    def test_duplicate_edge_either_orientation(self):
        with pytest.raises(InvalidEdge):
            build_graph(3, [(0, 1), (1, 0), (1, 2)], 0)

    def test_disconnected(self):
        with pytest.raises(DisconnectedGraph):
            build_graph(3, [(0, 1)], 0)

    def test_bad_center(self):
        with pytest.raises(InvalidEdge):
            build_graph(3, [(0, 1), (1, 2)], 5)


class TestNtuGraph:
    def test_25_joints(self):
        assert ntu25_graph().num_joints == 25

    def test_spanning_tree_edge_count(self):
        assert len(ntu25_graph().edges) == 24

    def test_connected_and_acyclic(self):
        g = ntu25_graph()
        reached = bfs_components(g.num_joints, g.edges)
        assert reached == set(range(25))
        # a connected graph on V nodes with V-1 edges is a tree
        assert len(g.edges) == g.num_joints - 1

    def test_base_pose_matches_graph(self):
        assert BASE_POSE.shape == (25, 3)

    def test_bone_list_is_the_documented_constant(self):
        assert ntu25_graph().edges == NTU_BONES


class TestValidateSequence:
    def test_all_zero_all_invalid_is_ok(self):
        seq = SequenceTensor(data=np.zeros((3, 4, 5)),
                             valid=np.zeros((4, 5), dtype=bool),
                             num_real_frames=0)
        assert validate_sequence(seq).ok

    def test_data_under_invalid_mask(self):
        data = np.zeros((3, 4, 5))
        data[0, 0, 0] = 1.0
        seq = SequenceTensor(data=data, valid=np.zeros((4, 5), dtype=bool),
                             num_real_frames=0)
        report = validate_sequence(seq)
        assert not report.ok
        assert any("invalid mask" in f for f in report.findings)

    def test_nan_detected(self):
        data = np.zeros((3, 4, 5))
        data[1, 2, 3] = np.nan
        seq = SequenceTensor(data=data, valid=np.ones((4, 5), dtype=bool),
                             num_real_frames=4)
        report = validate_sequence(seq)
        assert not report.ok
        assert any("non-finite" in f for f in report.findings)


class TestSyntheticGenerator:
    def test_deterministic(self):
        spec = SynthSpec(seed=7)
        a = generate_synthetic_dataset(spec)
        b = generate_synthetic_dataset(spec)
        for sa, sb in zip(a.samples, b.samples):
            assert sa.sample_id == sb.sample_id
            assert np.array_equal(sa.sequence.data, sb.sequence.data)

    def test_counts_balanced(self):
        ds = generate_synthetic_dataset(SynthSpec(num_classes=4,
                                                  samples_per_class=50))
        assert len(ds) == 200
        assert np.bincount(ds.labels()).tolist() == [50] * 4

    def test_left_arm_variance_dominates_legs_for_class0(self):
        # generator contract: the moving region's temporal variance beats an
        # untouched region by >= 10x
        ds = generate_synthetic_dataset(SynthSpec(seed=3))
        for s in ds.samples:
            if s.label != 0:
                continue
            var = s.sequence.data.var(axis=1).sum(axis=0)  # per joint
            assert (var[list(LEFT_ARM_JOINTS)].mean()
                    >= 10.0 * var[list(LEG_JOINTS)].mean())

    def test_zero_under_mask_and_validity(self):
        ds = generate_synthetic_dataset(SynthSpec(seed=5, frames=12))
        for s in ds.samples:
            assert validate_sequence(s.sequence).ok
            assert s.sequence.valid.all()
            assert s.sequence.num_real_frames == 12

    def test_nearest_centroid_on_joint_variance(self):
        # guards against a degenerate generator: raw per-joint temporal
        # variance must separate the default four classes
        ds = generate_synthetic_dataset(SynthSpec(seed=11))
        feats = np.stack([s.sequence.data.var(axis=1).sum(axis=0)
                          for s in ds.samples])
        labels = ds.labels()
        centroids = np.stack([feats[labels == c].mean(axis=0)
                              for c in range(ds.num_classes)])
        pred = np.argmin(
            ((feats[:, None, :] - centroids[None]) ** 2).sum(axis=2), axis=1)
        assert (pred == labels).mean() >= 0.9

    @pytest.mark.parametrize("bad", [
        SynthSpec.__new__(SynthSpec),  # placeholder, replaced below
    ])
    def test_invalid_specs(self, bad):
        for kwargs in ({"num_classes": 0}, {"samples_per_class": -1},
                       {"frames": 0}, {"noise_std": -0.1},
                       {"num_classes": 99}):
            with pytest.raises(InvalidSpec):
                generate_synthetic_dataset(SynthSpec(**kwargs))
