import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pwabarrier.benchmarks import dubins_graph, pendulum_network
from pwabarrier.geometry import Box
from pwabarrier.relaxation import (
    ComputationGraph,
    Interval,
    Network,
    RelaxationError,
    UncertainAffineMap,
    WeightFileError,
    image_box,
    load_network,
    read_network,
    relax_elementwise,
    relax_region,
    write_network,
)

FUNCS = {
    "sin": np.sin, "cos": np.cos, "cube": lambda t: t**3, "square": lambda t: t**2,
    "relu": lambda t: np.maximum(t, 0), "tanh": np.tanh,
}


def sampled_violation(kind, lo, hi, n=10_000):
    t = np.linspace(lo, hi, n)
    sl, il, su, iu = relax_elementwise(kind, Interval(lo, hi))
    g = FUNCS[kind](t)
    return max(np.max(sl * t + il - g), np.max(g - su * t - iu))


def region_violation(graph, box, rng, n=10_000):
    m = relax_region(graph, box)
    x = box.sample(rng, n)
    fx = graph.evaluate(x)
    lo = x @ m.A_lo.T + m.b_lo
    hi = x @ m.A_hi.T + m.b_hi
    return max(np.max(lo - fx), np.max(fx - hi))


def cubic_plus_identity():
    g = ComputationGraph(1)
    cube = g.elementwise("cube", g.input)
    return g.set_output(g.add(cube, g.input))


class TestElementwise:
    def test_cube_unit_interval(self):
        sl, il, su, iu = relax_elementwise("cube", Interval(0, 1))
        assert (su, iu) == pytest.approx((1.0, 0.0))
        assert (sl, il) == pytest.approx((0.75, -0.25))
        assert sampled_violation("cube", 0, 1) <= 1e-12

    def test_relu_symmetric(self):
        sl, il, su, iu = relax_elementwise("relu", Interval(-1, 1))
        assert (su, iu) == pytest.approx((0.5, 0.5))
        assert sl in (0.0, 0.5, 1.0) and il == 0.0
        assert sampled_violation("relu", -1, 1) <= 1e-12

    def test_relu_lower_slope_heuristic(self):
        assert relax_elementwise("relu", Interval(-2, 1))[0] == 0.0
        assert relax_elementwise("relu", Interval(-1, 2))[0] == 1.0

    def test_point_interval_is_constant(self):
        a = 0.7
        assert relax_elementwise("sin", Interval(a, a)) == (0.0, np.sin(a), 0.0, np.sin(a))

    def test_unknown_kind(self):
        with pytest.raises(RelaxationError):
            relax_elementwise("exp", Interval(0, 1))

    @pytest.mark.parametrize("kind", sorted(FUNCS))
    def test_dense_sampling_soundness_20_intervals(self, kind):
        rng = np.random.default_rng(sorted(FUNCS).index(kind))
        for _ in range(20):
            lo = rng.uniform(-4, 3)
            hi = lo + rng.uniform(0, 4)
            assert sampled_violation(kind, lo, hi) <= 1e-12 * max(1, abs(lo) ** 3, abs(hi) ** 3)

    @settings(max_examples=200, deadline=None)
    @given(st.sampled_from(sorted(FUNCS)), st.floats(-8, 8), st.floats(0, 8))
    def test_soundness_property(self, kind, lo, width):
        hi = lo + width
        assert sampled_violation(kind, lo, hi, n=2000) <= 1e-9 * max(1, abs(lo) ** 3, abs(hi) ** 3)


class TestRelaxRegion:
    def test_identity_graph_is_exact(self):
        g = ComputationGraph(2).set_output(0)
        m = relax_region(g, Box([-1, 2], [0, 3]))
        np.testing.assert_array_equal(m.A_lo, np.eye(2))
        np.testing.assert_array_equal(m.A_hi, np.eye(2))
        np.testing.assert_array_equal(m.b_lo, 0)
        assert m.exact

    def test_cubic_plus_identity(self):
        m = relax_region(cubic_plus_identity(), Box([0], [1]))
        assert m.A_lo[0, 0] == pytest.approx(1.75)
        assert m.b_lo[0] == pytest.approx(-0.25)
        assert m.A_hi[0, 0] == pytest.approx(2.0)
        assert m.b_hi[0] == pytest.approx(0.0)

    def test_drone_graph_passes_through(self):
        tau, mass = 1.0, 0.9
        A = np.array([[1, tau], [0, 1 - 0.1 * tau / mass]])
        g = ComputationGraph(2)
        g.set_output(g.affine(g.input, A))
        m = relax_region(g, Box([-5, -1], [5, 1]))
        np.testing.assert_allclose(m.A_lo, A)
        np.testing.assert_allclose(m.A_hi, A)
        assert m.exact

    def test_nonfinite_range_names_node(self):
        g = ComputationGraph(1)
        big = g.affine(g.input, [[1.0]])
        g.set_output(g.elementwise("cube", big))
        with pytest.raises(RelaxationError, match="node 2"):
            relax_region(g, Box([0], [1e120]))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            relax_region(ComputationGraph(2).set_output(0), Box([0], [1]))

    @pytest.mark.parametrize("name", ["cubic", "dubins", "pendulum_relu", "pendulum_tanh"])
    def test_dense_sampling_soundness_20_regions(self, name):
        rng = np.random.default_rng(7)
        if name == "cubic":
            g, n = cubic_plus_identity(), 1
        elif name == "dubins":
            g, n = dubins_graph(), 3
        else:
            g, n = pendulum_network(activation=name.split("_")[1]).to_graph(), 2
        for _ in range(20):
            lo = rng.uniform(-3, 2, n)
            box = Box(lo, lo + rng.uniform(0.01, 1.5, n))
            assert region_violation(g, box, rng) <= 1e-9

    def test_affine_graph_exact_everywhere(self):
        rng = np.random.default_rng(8)
        g = ComputationGraph(3)
        g.set_output(g.add(g.affine(g.input, rng.normal(size=(3, 3)), rng.normal(size=3)), g.input))
        for _ in range(10):
            lo = rng.uniform(-3, 3, 3)
            assert relax_region(g, Box(lo, lo + 1)).exact

    def test_monotone_refinement(self):
        rng = np.random.default_rng(9)
        graphs = [cubic_plus_identity(), dubins_graph(), pendulum_network(activation="tanh").to_graph()]
        for g in graphs:
            n = g.n
            for _ in range(10):
                lo = rng.uniform(-2, 1, n)
                parent_box = Box(lo, lo + rng.uniform(0.2, 1.5, n))
                parent = relax_region(g, parent_box)
                axis = rng.integers(n)
                mid = parent_box.center[axis]
                hi1 = parent_box.hi.copy()
                hi1[axis] = mid
                lo2 = parent_box.lo.copy()
                lo2[axis] = mid
                for child_box in (Box(parent_box.lo, hi1), Box(lo2, parent_box.hi)):
                    child = relax_region(g, child_box)
                    x = child_box.sample(rng, 2000)
                    x = np.vstack([x, child_box.vertices()])
                    gap_child = (x @ (child.A_hi - child.A_lo).T + child.b_hi - child.b_lo).max(axis=0)
                    gap_parent = (x @ (parent.A_hi - parent.A_lo).T + parent.b_hi - parent.b_lo).max(axis=0)
                    assert np.all(gap_child <= gap_parent + 1e-9)


class TestImageBox:
    def test_identity_translation(self):
        r = Box([0, 0], [1, 1])
        m = UncertainAffineMap(np.eye(2), np.eye(2), np.zeros(2), np.zeros(2), r)
        assert image_box(m, r, [1, 1]) == Box([1, 1], [2, 2])

    def test_sign_uncertain_matrix(self):
        r = Box([2], [3])
        m = UncertainAffineMap(-np.eye(1), np.eye(1), np.zeros(1), np.zeros(1), r)
        assert image_box(m, r, [0]) == Box([-3], [3])

    @pytest.mark.parametrize("coupled", [True, False])
    def test_monte_carlo_containment(self, coupled):
        rng = np.random.default_rng(10)
        for _ in range(20):
            r = Box(rng.uniform(-2, 0, 2), rng.uniform(0.1, 2, 2))
            A1, A2 = rng.normal(size=(2, 2, 2))
            b1, b2 = rng.normal(size=(2, 2))
            m = UncertainAffineMap(A1, A2, b1, b2, r, coupled=coupled)
            eta = rng.normal(size=2)
            img = image_box(m, r, eta)
            x = r.sample(rng, 10_000)
            alpha = rng.uniform(size=10_000) if coupled else rng.uniform(size=(10_000, 2))
            y = m.apply(x, alpha) + eta
            assert np.all(img.contains(y, tol=1e-12))


class TestCorners:
    def test_coupled_two_corners(self):
        r = Box([0, 0], [1, 1])
        m = UncertainAffineMap(np.eye(2), 2 * np.eye(2), np.zeros(2), np.ones(2), r)
        assert len(m.corners()) == 2

    def test_uncoupled_enumerates_loose_rows(self):
        r = Box([0, 0, 0], [1, 1, 1])
        A_hi = np.eye(3)
        A_hi[0, 0] = 2
        A_hi[1, 1] = 2
        m = UncertainAffineMap(np.eye(3), A_hi, np.zeros(3), np.zeros(3), r, coupled=False)
        assert len(m.corners()) == 4

    def test_exact_single_corner(self):
        r = Box([0], [1])
        assert len(UncertainAffineMap(np.eye(1), np.eye(1), [0.0], [0.0], r).corners()) == 1


class TestNetworkFiles:
    def test_identity_layer_equals_affine(self, tmp_path):
        W, b = np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([0.5, -0.5])
        path = tmp_path / "net.txt"
        write_network(Network([W], [b], "identity"), path)
        g = load_network(path)
        x = np.random.default_rng(0).normal(size=(5, 2))
        np.testing.assert_allclose(g.evaluate(x), x @ W.T + b)

    def test_relu_net_matches_forward_pass(self, tmp_path):
        net = pendulum_network(seed=3)
        path = tmp_path / "net.txt"
        write_network(net, path)
        g = load_network(path)
        x = np.random.default_rng(1).uniform(-1, 1, size=(100, 2))
        np.testing.assert_array_equal(g.evaluate(x), net.forward(x))

    def test_zero_weights_give_final_bias(self, tmp_path):
        net = Network([np.zeros((64, 2)), np.zeros((2, 64))], [np.ones(64), np.array([0.3, -0.2])], "relu")
        path = tmp_path / "net.txt"
        write_network(net, path)
        g = load_network(path)
        out = g.evaluate(np.random.default_rng(2).normal(size=(10, 2)))
        np.testing.assert_array_equal(out, np.tile([0.3, -0.2], (10, 1)))
        m = relax_region(g, Box([-1, -1], [1, 1]))
        np.testing.assert_allclose(m.A_lo, 0, atol=1e-15)
        np.testing.assert_allclose(m.b_hi, [0.3, -0.2])

    def test_comments_and_blank_lines(self, tmp_path):
        path = tmp_path / "net.txt"
        path.write_text("# pendulum\nlayers 1 activation relu\n\nshape 1 1  # one unit\n2.0\n0.5\n")
        assert read_network(path).weights[0][0, 0] == 2.0

    def test_shape_mismatch_reports_line(self, tmp_path):
        path = tmp_path / "net.txt"
        path.write_text("layers 2 activation relu\nshape 2 1\n1\n1\n0 0\nshape 1 3\n1 1 1\n0\n")
        with pytest.raises(WeightFileError, match=":6:"):
            read_network(path)

    def test_unknown_activation(self, tmp_path):
        path = tmp_path / "net.txt"
        path.write_text("layers 1 activation softplus\nshape 1 1\n1\n0\n")
        with pytest.raises(WeightFileError, match="softplus"):
            read_network(path)

    def test_bad_row_length(self, tmp_path):
        path = tmp_path / "net.txt"
        path.write_text("layers 1 activation relu\nshape 1 2\n1\n0\n")
        with pytest.raises(WeightFileError, match=":3:"):
            read_network(path)
