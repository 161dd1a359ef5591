import os
import subprocess
import sys
import textwrap

import numpy as np
import pytest

from purkinje_ecg import fixtures
from purkinje_ecg.conduction import (ConductivityModel, CouplingConfig,
                                     EikonalSolver, fim_backend,
                                     root_times_from_rt, solve_coupled,
                                     solve_myocardium, solve_tree,
                                     velocity_tensor)
from purkinje_ecg.errors import SolverError
from purkinje_ecg.tree import PurkinjeTree


def _chain_tree(lengths):
    """Straight polyline tree along x with the given edge lengths."""
    xs = np.concatenate([[0.0], np.cumsum(lengths)])
    nodes = np.column_stack([xs, np.zeros_like(xs), np.zeros_like(xs)])
    edges = np.column_stack([np.arange(len(lengths)),
                             np.arange(1, len(lengths) + 1)])
    return PurkinjeTree(nodes=nodes, uv=np.zeros((len(xs), 2)), edges=edges,
                        edge_lengths=np.asarray(lengths, dtype=float), root=0)


class TestConductivityModel:
    def test_default_velocities(self):
        cm = ConductivityModel()
        t = velocity_tensor(cm, np.asarray([1.0, 0.0, 0.0]))
        v_long = np.sqrt(t[0, 0])
        v_trans = np.sqrt(t[1, 1])
        assert v_long == pytest.approx(0.6124, abs=1e-3)   # mm/ms
        assert v_trans == pytest.approx(0.2449, abs=1e-3)
        assert v_long / v_trans == pytest.approx(2.5, rel=1e-6)

    def test_tensor_eigenvector_along_fiber(self):
        cm = ConductivityModel()
        f = np.asarray([1.0, 1.0, 1.0]) / np.sqrt(3.0)
        t = velocity_tensor(cm, f)
        ev = t @ f
        assert np.allclose(ev, (ev @ f) * f)

    def test_invalid_conductivity_rejected(self):
        with pytest.raises(SolverError):
            ConductivityModel(sigma_il=-1.0)


class TestSolveTree:
    def test_single_edge(self):
        tree = _chain_tree([10.0])
        tau = solve_tree(tree, cv=2.0, sources=[(0, 0.0)])
        assert tau[1] == pytest.approx(5.0)   # 10 mm at 2 m/s -> 5 ms

    def test_source_offsets_propagate(self):
        tree = _chain_tree([4.0, 4.0, 4.0])
        tau = solve_tree(tree, cv=2.0, sources=[(0, 3.0)])
        assert np.allclose(tau, [3.0, 5.0, 7.0, 9.0])

    def test_two_sources_take_min(self):
        tree = _chain_tree([4.0, 4.0, 4.0, 4.0])
        tau = solve_tree(tree, cv=2.0, sources=[(0, 0.0), (4, 0.0)])
        assert np.allclose(tau, [0.0, 2.0, 4.0, 2.0, 0.0])

    def test_no_sources_rejected(self):
        with pytest.raises(SolverError):
            solve_tree(_chain_tree([1.0]), cv=2.0, sources=[])

    def test_matches_bellman_ford(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            n = 60
            parents = np.asarray([rng.integers(0, i) for i in range(1, n)])
            nodes = rng.uniform(-30, 30, (n, 3))
            edges = np.column_stack([parents, np.arange(1, n)])
            lengths = np.linalg.norm(nodes[edges[:, 0]] - nodes[edges[:, 1]],
                                     axis=1) + 1e-6
            tree = PurkinjeTree(nodes=nodes, uv=np.zeros((n, 2)), edges=edges,
                                edge_lengths=lengths, root=0)
            cv = rng.uniform(2.0, 4.0)
            sources = [(int(rng.integers(0, n)), float(rng.uniform(0, 10)))
                       for _ in range(3)]
            tau = solve_tree(tree, cv, sources)
            # Bellman-Ford: repeated edge relaxation until a fixed point
            ref = np.full(n, np.inf)
            for node, t in sources:
                ref[node] = min(ref[node], t)
            w = lengths / cv
            for _ in range(n):
                changed = False
                for (a, b), wt in zip(edges, w):
                    if ref[a] + wt < ref[b]:
                        ref[b] = ref[a] + wt
                        changed = True
                    if ref[b] + wt < ref[a]:
                        ref[a] = ref[b] + wt
                        changed = True
                if not changed:
                    break
            assert np.allclose(tau, ref, atol=1e-9)


class TestEikonal:
    def test_isotropic_cube_accuracy(self):
        vm = fixtures.cube_mesh(10, size=20.0)
        cm = ConductivityModel()
        tensors = velocity_tensor(cm, vm.fiber)
        v = np.sqrt(tensors[0, 0, 0])
        iso = np.eye(3)[None] * tensors[0, 0, 0]
        tau = solve_myocardium(vm, np.repeat(iso, len(vm.tets), axis=0),
                               [(0, 0.0)])
        exact = np.linalg.norm(vm.vertices - vm.vertices[0], axis=1) / v
        corner = exact.max()
        assert np.abs(tau - exact).max() < 0.05 * corner

    def test_min_superposition(self):
        vm = fixtures.cube_mesh(6, size=12.0)
        solver = EikonalSolver(vm, cm=ConductivityModel())
        n = vm.n_vertices
        s1, s2 = 0, n - 1
        both = solver.solve([(s1, 0.0), (s2, 1.0)])
        a = solver.solve([(s1, 0.0)])
        b = solver.solve([(s2, 1.0)])
        assert np.allclose(both, np.minimum(a, b), atol=1e-6)

    def test_point_source_inside_tet(self):
        vm = fixtures.cube_mesh(5, size=10.0)
        solver = EikonalSolver(vm, cm=ConductivityModel())
        p = np.asarray([5.1, 4.9, 5.2])
        tau = solver.solve([(p, 0.0)])
        assert np.all(np.isfinite(tau))
        assert tau.min() >= 0.0

    def test_attach_points(self):
        vm = fixtures.cube_mesh(4, size=8.0)
        solver = EikonalSolver(vm, cm=ConductivityModel())
        pts = np.asarray([
            [4.0, 4.0, 4.0],      # interior
            [8.5, 4.0, 4.0],      # outside, within snap distance
        ])
        tets, snaps = solver.attach_points(pts, snap_mm=2.0)
        assert tets[0] >= 0 and snaps[0] == -1
        assert tets[1] == -1 and snaps[1] >= 0
        with pytest.raises(SolverError):
            solver.attach_points(np.asarray([[50.0, 50.0, 50.0]]))

    def test_python_backend_matches_compiled(self, tmp_path):
        if fim_backend() != "compiled":
            pytest.skip("compiled kernel unavailable")
        vm = fixtures.cube_mesh(6, size=12.0)
        solver = EikonalSolver(vm, cm=ConductivityModel())
        tau_c = solver.solve([(0, 0.0)])
        out = tmp_path / "tau_py.npy"
        script = textwrap.dedent(f"""
            import numpy as np
            from purkinje_ecg import fixtures
            from purkinje_ecg.conduction import (ConductivityModel,
                                                 EikonalSolver, fim_backend)
            assert fim_backend() == "python"
            vm = fixtures.cube_mesh(6, size=12.0)
            solver = EikonalSolver(vm, cm=ConductivityModel())
            np.save({str(out)!r}, solver.solve([(0, 0.0)]))
        """)
        env = dict(os.environ, PURKINJE_ECG_FORCE_PY="1")
        subprocess.run([sys.executable, "-c", script], check=True, env=env)
        tau_py = np.load(out)
        assert np.allclose(tau_c, tau_py, atol=1e-9)


class TestCoupling:
    def test_root_times_from_rt(self):
        assert root_times_from_rt(30.0) == {"right": 30.0, "left": 0.0}
        assert root_times_from_rt(-75.0) == {"right": 0.0, "left": 75.0}
        assert root_times_from_rt(0.0) == {"right": 0.0, "left": 0.0}

    def test_coupled_converges_on_fixture(self, forward_model,
                                           synthetic_theta):
        sim = forward_model.simulate(synthetic_theta)
        af = sim.activation
        assert af.converged
        assert af.n_outer_iters <= 10
        assert np.all(np.isfinite(af.tau_myo))
        assert np.all(af.tau_myo >= 0.0)

    def test_coupled_fields_monotone_in_sweeps(self, forward_model,
                                               synthetic_theta):
        """Truncating the outer loop earlier never yields smaller times."""
        fm = forward_model
        trees = fm.grow_trees(synthetic_theta)
        prev = None
        for iters in (1, 2, 3, 8):
            cc = CouplingConfig(cv_purkinje=2.0,
                                root_time=root_times_from_rt(-75.0),
                                max_outer_iters=iters, tol=1e-12)
            af = solve_coupled(trees, fm.vm, fm.cm, cc, solver=fm.solver)
            if prev is not None:
                assert np.all(af.tau_myo <= prev + 1e-9)
            prev = af.tau_myo
