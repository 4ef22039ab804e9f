import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moba.pareto_front import (ParetoFront, _weight_grid, load_front_csv,
                               nondominated_filter, save_front_csv,
                               scalarized_solution, sweep_front)
from moba.problem import ProblemDims, generate_instance


def make(n=6, m=2, seed=11, mu=0.1):
    return generate_instance(ProblemDims(n, n, m), mu, seed)


def brute_nondominated(P):
    """Quadratic-time reference filter with the same dedup rule."""
    P = np.atleast_2d(np.asarray(P, float))
    reps = []
    for i in range(P.shape[0]):
        if not any(np.max(np.abs(P[i] - P[j])) <= 1e-12 for j in reps):
            reps.append(i)
    keep = []
    for i in reps:
        dominated = False
        for j in reps:
            if j == i:
                continue
            if np.all(P[j] <= P[i]) and np.any(P[j] < P[i]):
                dominated = True
                break
        if not dominated:
            keep.append(i)
    return np.array(keep, dtype=int)


class TestWeightGrid:
    def test_m1_trivial(self):
        np.testing.assert_array_equal(_weight_grid(1, 10), [[1.0]])

    def test_m2_linspace(self):
        W = _weight_grid(2, 5)
        assert W.shape == (5, 2)
        np.testing.assert_allclose(W.sum(axis=1), 1.0)
        np.testing.assert_allclose(W[:, 0], [0.0, 0.25, 0.5, 0.75, 1.0])

    def test_m3_lattice(self):
        W = _weight_grid(3, 6)
        # stars and bars: C(E + m - 1, m - 1) lattice points with E = 5
        from math import comb
        assert W.shape == (comb(5 + 2, 2), 3)
        np.testing.assert_allclose(W.sum(axis=1), 1.0)
        assert np.all(W >= 0)
        # vertices present
        for v in np.eye(3):
            assert any(np.allclose(row, v) for row in W)

    def test_rejects_tiny_grid(self):
        with pytest.raises(ValueError):
            _weight_grid(2, 1)


class TestScalarized:
    def test_stationary_point_of_weighted_sum(self, rng):
        inst = make(seed=4)
        for w in ([0.3, 0.7], [1.0, 0.0], [0.5, 0.5]):
            x, phi = scalarized_solution(inst, np.array(w))
            G = inst.exact_hypergradients(x)
            assert np.linalg.norm(np.array(w) @ G) < 1e-6
            np.testing.assert_allclose(phi, inst.reduced_objectives(x), atol=1e-9)

    def test_beats_random_points(self, rng):
        inst = make(seed=8)
        w = np.array([0.4, 0.6])
        x, phi = scalarized_solution(inst, w)
        best = w @ phi
        for _ in range(50):
            cand = inst.reduced_objectives(x + rng.standard_normal(6))
            assert best <= w @ cand + 1e-10

    def test_rejects_off_simplex(self):
        inst = make()
        with pytest.raises(ValueError):
            scalarized_solution(inst, np.array([0.5, 0.6]))
        with pytest.raises(ValueError):
            scalarized_solution(inst, np.array([-0.1, 1.1]))

    def test_rejects_l1_instances(self):
        inst = generate_instance(ProblemDims(4, 4, 2), 0.1, 3,
                                 l1_weights=[0.1, 0.1])
        with pytest.raises(ValueError):
            scalarized_solution(inst, np.array([0.5, 0.5]))


class TestSweep:
    def test_front_is_mutually_nondominated(self):
        inst = make(seed=5)
        front = sweep_front(inst, 50)
        keep = nondominated_filter(front.objectives)
        assert keep.size == len(front)

    def test_front_objectives_consistent(self):
        inst = make(seed=5)
        front = sweep_front(inst, 30)
        for x, phi in zip(front.decisions, front.objectives):
            np.testing.assert_allclose(phi, inst.reduced_objectives(x), atol=1e-9)

    def test_default_sizes(self):
        assert sweep_front(make(n=3, m=2, seed=1)).num_weights == 500
        assert sweep_front(make(n=3, m=3, seed=1)).num_weights == 60

    def test_decision_points_shape_and_value(self):
        inst = make(seed=7)
        front = sweep_front(inst, 25)
        Z = front.decision_points(inst)
        assert Z.shape == (len(front), 2 * inst.dims.n_x)
        j = len(front) // 2
        x = front.decisions[j]
        np.testing.assert_allclose(Z[j], np.concatenate([x, inst.lower_solution(x)]),
                                   atol=1e-12)

    def test_m1_single_point(self):
        inst = make(m=1, seed=2)
        front = sweep_front(inst)
        assert len(front) == 1
        G = inst.exact_hypergradients(front.decisions[0])
        assert np.linalg.norm(G[0]) < 1e-6


class TestNondominatedFilter:
    def test_hand_cases(self):
        P = np.array([[1.0, 2.0], [2.0, 1.0], [2.0, 2.0], [0.5, 3.0]])
        np.testing.assert_array_equal(nondominated_filter(P), [0, 1, 3])
        # duplicate collapses to first occurrence
        P = np.array([[1.0, 1.0], [1.0, 1.0], [0.0, 2.0]])
        np.testing.assert_array_equal(nondominated_filter(P), [0, 2])
        # equal in one coordinate, better in the other: dominated
        P = np.array([[1.0, 1.0], [1.0, 0.5]])
        np.testing.assert_array_equal(nondominated_filter(P), [1])

    def test_empty(self):
        assert nondominated_filter(np.empty((0, 2))).size == 0

    @given(st.integers(0, 5_000), st.integers(1, 25), st.sampled_from([1, 2, 3]))
    @settings(max_examples=60)
    def test_matches_brute_force(self, seed, N, m):
        # duplicate-rich integer grids stress the dedup rule
        P = np.random.default_rng(seed).integers(0, 4, size=(N, m)).astype(float)
        np.testing.assert_array_equal(nondominated_filter(P), brute_nondominated(P))


class TestCsvRoundtrip:
    def test_roundtrip_bitwise(self, tmp_path):
        inst = make(seed=13)
        front = sweep_front(inst, 40)
        p = tmp_path / "front.csv"
        save_front_csv(front, p)
        back = load_front_csv(p, instance_seed=inst.seed)
        assert np.array_equal(back.weights, front.weights)
        assert np.array_equal(back.decisions, front.decisions)
        assert np.array_equal(back.objectives, front.objectives)
        assert back.instance_seed == inst.seed

    def test_roundtrip_m3(self, tmp_path):
        inst = make(n=4, m=3, seed=9)
        front = sweep_front(inst, 8)
        p = tmp_path / "front.csv"
        save_front_csv(front, p)
        back = load_front_csv(p)
        assert np.array_equal(back.objectives, front.objectives)
        assert back.weights.shape[1] == 3
