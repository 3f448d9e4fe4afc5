import numpy as np
import pytest

from sphere_grouping.gradcheck import PATHS, numerical_gradient, relative_error, run_gradcheck


class TestHelpers:
    def test_numerical_gradient_quadratic(self):
        g = numerical_gradient(lambda x: np.sum(x**2), np.array([1.0, -2.0, 3.0]))
        np.testing.assert_allclose(g, [2.0, -4.0, 6.0], rtol=1e-8)

    def test_relative_error(self):
        assert relative_error([1.0, 0.0], [1.0, 0.0]) == 0.0
        assert relative_error([1.0], [-1.0]) == pytest.approx(2.0)
        assert relative_error([0.0], [0.0]) == 0.0
        # tiny entries are judged against the overall scale
        assert relative_error([1.0, 1e-9], [1.0, 2e-9]) == pytest.approx(1e-7)


class TestRun:
    def test_all_paths_pass(self):
        reports = run_gradcheck(instances=5, seed=1)
        assert [r.name for r in reports] == list(PATHS)
        assert all(r.passed for r in reports), [(r.name, r.max_error) for r in reports]

    def test_three_loops(self):
        assert all(r.passed for r in run_gradcheck(instances=3, seed=2, loops=3, paths=("unroll", "net")))

    @pytest.mark.parametrize("fault", ["similarity", "unroll", "net"])
    def test_fault_detected(self, fault):
        reports = {r.name: r for r in run_gradcheck(instances=2, seed=0, fault=fault)}
        assert not reports[fault].passed
        assert all(r.passed for name, r in reports.items() if name != fault)
