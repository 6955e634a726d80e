import numpy as np
import pytest

from lkreg.operators import EXACT_LINEAR, estimate_eta, estimate_norm, verify_frechet
from lkreg.problems import (
    add_noise,
    fredholm_matrix,
    get_problem,
    list_problems,
    make_linear_fredholm,
    make_weakly_nonlinear,
    verify_problem,
)
from lkreg.solvers import SolverConfig, run_llk


class TestFredholm:
    def test_linear_metadata(self, fredholm):
        assert fredholm.eta_cert == 0.0 and fredholm.kern_holds is True
        assert all(estimate_eta(b, fredholm.x0, fredholm.rho) == 0.0 for b in fredholm.system)

    def test_block_norms(self, fredholm):
        for b in fredholm.system:
            s = np.linalg.norm(b.matrix, 2)
            assert 0 < s <= 1 + 1e-12

    def test_ill_conditioned(self):
        # dense singular-value oracle on the unscaled and the block-scaled operator
        assert np.linalg.cond(fredholm_matrix(64, 0.05)) > 1e6
        p = make_linear_fredholm(64, 8, 0.05)
        A = np.vstack([b.matrix for b in p.system])
        assert np.linalg.cond(A) > 1e6
        assert np.linalg.cond(fredholm_matrix(64, 0.02)) < np.linalg.cond(fredholm_matrix(64, 0.05))

    def test_solution_invariants(self, fredholm):
        assert np.linalg.norm(fredholm.x_exact - fredholm.x0) <= fredholm.rho / 2
        for b, y in zip(fredholm.system, fredholm.exact_data):
            np.testing.assert_allclose(b.apply(fredholm.x_exact), y, rtol=0, atol=1e-12)

    def test_divisibility(self):
        with pytest.raises(ValueError):
            make_linear_fredholm(64, 7)


class TestWeaklyNonlinear:
    def test_certified_ball(self, weak_nl):
        assert weak_nl.eta_cert < 0.45
        assert weak_nl.kern_holds is None
        assert np.linalg.norm(weak_nl.x_exact - weak_nl.x0) <= weak_nl.rho / 2
        for seed in (11, 12, 13):
            for b in weak_nl.system:
                assert estimate_eta(b, weak_nl.x0, weak_nl.rho, samples=200, seed=seed) < 0.45

    def test_frechet_order(self, weak_nl, rng):
        for b in weak_nl.system:
            h = rng.standard_normal(64)
            assert 1.7 <= verify_frechet(b, weak_nl.x0, h / np.linalg.norm(h)) <= 2.3

    def test_alpha_zero_matches_linear(self, fredholm):
        p = make_weakly_nonlinear(64, 8, alpha=0.0)
        assert p.eta_cert == 0.0 and p.kern_holds is True and p.rho == fredholm.rho
        np.testing.assert_array_equal(p.x0, fredholm.x0)
        s1 = add_noise(p, [1e-2] * 8, seed=3)
        s2 = add_noise(fredholm, [1e-2] * 8, seed=3)
        a = run_llk(p.system, p.x0, s1.data, s1.noise, SolverConfig(3.0))
        b = run_llk(fredholm.system, fredholm.x0, s2.data, s2.noise, SolverConfig(3.0))
        np.testing.assert_array_equal(a.final_iterate, b.final_iterate)
        assert a.termination_index == b.termination_index

    def test_norm_scaling_on_ball(self, weak_nl, rng):
        from lkreg.operators import sample_ball
        for _ in range(5):
            x = sample_ball(rng, weak_nl.x0, weak_nl.rho)
            for b in weak_nl.system:
                assert estimate_norm(b, x, iters=60) <= 1 + 1e-8

    def test_shrink_exhaustion(self):
        with pytest.raises(ValueError, match="could not certify"):
            make_weakly_nonlinear(64, 8, alpha=0.05, max_shrinks=1)


class TestNoise:
    def test_zero_noise_bitwise(self, fredholm):
        s = add_noise(fredholm, [0.0] * 8, seed=5)
        for y, yd in zip(fredholm.exact_data, s.data):
            assert np.array_equal(y, yd)

    def test_calibrated_norm(self, fredholm):
        s = add_noise(fredholm, [1e-2] * 8, seed=7)
        for y, yd in zip(fredholm.exact_data, s.data):
            assert abs(np.linalg.norm(yd - y) - 0.9e-2) <= 1e-14

    def test_heterogeneous_levels(self, fredholm):
        deltas = [1e-1, 1e-3, 1e-2, 1e-3, 1e-3, 1e-3, 1e-3, 1e-3]
        s = add_noise(fredholm, deltas, seed=0)
        assert s.noise.delta_max == 1e-1 and s.noise.deltas == tuple(deltas)

    def test_deterministic(self, fredholm):
        a = add_noise(fredholm, [1e-2] * 8, seed=9)
        b = add_noise(fredholm, [1e-2] * 8, seed=9)
        assert all(np.array_equal(u, v) for u, v in zip(a.data, b.data))

    def test_validation(self, fredholm):
        with pytest.raises(ValueError):
            add_noise(fredholm, [1e-2] * 8, fill=1.0)
        with pytest.raises(ValueError):
            add_noise(fredholm, [1e-2] * 7)


def test_registry():
    ids = [pid for pid, _ in list_problems()]
    assert ids == ["fredholm-64-8", "weak-nl-64-8-a05"]
    assert get_problem("fredholm-32-4").N == 4
    assert get_problem("weak-nl-64-8-a05").params["alpha"] == 0.05
    with pytest.raises(KeyError):
        get_problem("heat-64")


@pytest.mark.parametrize("pid", ["fredholm-64-8", "weak-nl-64-8-a05"])
def test_regularity_suite(pid):
    reports, checks = verify_problem(get_problem(pid), seed=3)
    assert all(checks.values()), checks
    linear = get_problem(pid).system.is_linear
    assert all((r.frechet_order == EXACT_LINEAR) == linear for r in reports)
