import numpy as np
import pytest

from purkinje_ecg.errors import GrowthError
from purkinje_ecg.meshes import harmonic_flatten, load_surface
from purkinje_ecg.tree import (PurkinjeTree, TreeGrowthConfig,
                               VentricleParams, closest_point_gradient,
                               grow_tree)


@pytest.fixture(scope="module")
def patch(fixture_dir):
    return load_surface(str(fixture_dir / "endo_left.obj"))


@pytest.fixture(scope="module")
def flat(patch):
    return harmonic_flatten(patch)


CFG = TreeGrowthConfig()
VP = VentricleParams(initial_length=35.0, fascicle_lengths=(10.0, 18.0),
                     fascicle_angles=(1.4, 2.3))


class TestClosestPointGradient:
    def test_points_away_from_nearest(self):
        pts = np.asarray([[0.0, 0.0], [5.0, 5.0]])
        g = closest_point_gradient(pts, np.asarray([1.0, 0.0]))
        assert np.allclose(g, [1.0, 0.0])

    def test_zero_on_collision(self):
        pts = np.asarray([[1.0, 2.0]])
        g = closest_point_gradient(pts, np.asarray([1.0, 2.0]))
        assert np.allclose(g, 0.0)

    def test_unit_norm(self):
        rng = np.random.default_rng(3)
        pts = rng.uniform(-1, 1, (40, 2))
        for _ in range(20):
            x = rng.uniform(-1, 1, 2)
            g = closest_point_gradient(pts, x)
            n = np.linalg.norm(g)
            assert n == pytest.approx(1.0) or n == 0.0


class TestGrowTree:
    def test_tree_is_valid_graph(self, flat, patch):
        tree = grow_tree(flat, patch, CFG, VP)
        assert len(tree.edges) == tree.n_nodes - 1
        assert np.all(tree.edge_lengths > 0)
        assert len(tree.pmjs) > 0
        assert tree.root == 0
        # edge lengths match node geometry
        d = np.linalg.norm(tree.nodes[tree.edges[:, 0]]
                           - tree.nodes[tree.edges[:, 1]], axis=1)
        assert np.allclose(d, tree.edge_lengths)

    def test_deterministic(self, flat, patch):
        a = grow_tree(flat, patch, CFG, VP)
        b = grow_tree(flat, patch, CFG, VP)
        assert np.array_equal(a.nodes, b.nodes)
        assert np.array_equal(a.edges, b.edges)
        assert np.array_equal(a.pmjs, b.pmjs)

    def test_nodes_on_surface(self, flat, patch):
        tree = grow_tree(flat, patch, CFG, VP)
        # every node lies within the bounding box of the surface patch
        lo = patch.vertices.min(axis=0) - 1e-6
        hi = patch.vertices.max(axis=0) + 1e-6
        assert np.all(tree.nodes >= lo)
        assert np.all(tree.nodes <= hi)

    def test_initial_length_respected(self, flat, patch):
        """Path length from the root to the first branch point covers l_i."""
        short = VentricleParams(initial_length=10.0,
                                fascicle_lengths=(5.0, 5.0),
                                fascicle_angles=(0.5, -0.5))
        tree = grow_tree(flat, patch, CFG, short)
        # walk from the root down the single trunk
        adj = {}
        for (a, b), ln in zip(tree.edges, tree.edge_lengths):
            adj.setdefault(int(a), []).append((int(b), ln))
            adj.setdefault(int(b), []).append((int(a), ln))
        total, prev, cur = 0.0, -1, int(tree.root)
        while True:
            nxt = [(n, ln) for n, ln in adj[cur] if n != prev]
            if len(nxt) != 1:
                break
            prev, cur = cur, nxt[0][0]
            total += nxt[0][1]
        assert total == pytest.approx(10.0, rel=0.25)

    def test_longer_fascicles_make_bigger_trees(self, flat, patch):
        small = VentricleParams(initial_length=30.0,
                                fascicle_lengths=(3.0, 3.0),
                                fascicle_angles=(1.0, 2.0))
        big = VentricleParams(initial_length=30.0,
                              fascicle_lengths=(10.0, 10.0),
                              fascicle_angles=(1.0, 2.0))
        t_small = grow_tree(flat, patch, CFG, small)
        t_big = grow_tree(flat, patch, CFG, big)
        assert t_big.n_nodes > t_small.n_nodes

    def test_root_outside_disk_rejected(self):
        with pytest.raises(GrowthError):
            TreeGrowthConfig(root_uv=(1.5, 0.0))

    def test_json_round_trip(self, flat, patch, tmp_path):
        tree = grow_tree(flat, patch, CFG, VP)
        p = tmp_path / "tree.json"
        tree.to_json(str(p))
        again = PurkinjeTree.from_json(str(p))
        assert np.allclose(tree.nodes, again.nodes)
        assert np.array_equal(tree.edges, again.edges)
        assert np.array_equal(tree.pmjs, again.pmjs)
        assert np.allclose(tree.edge_lengths, again.edge_lengths)
