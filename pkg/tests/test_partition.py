import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safelse.corefn import Rho, logsumexp
from safelse.measure import DiscreteMeasure
from safelse.partition import (
    cvar,
    cvar_sandwich,
    log_partition,
    prop1_bounds,
    safe_log_partition,
    safe_logsumexp,
    solve_alpha,
)

LOG_PARTITION_37 = 1.789728043577631290288416
ALPHA_01_RHO03 = 0.1938434217527458710007491
FRHO_01_RHO03 = 0.4184133799432027226367692
SAFE_LSE_00_RHO03 = 0.6140877810473364841361362
SINGLE_ATOM_OFFSET_RHO01 = -0.05175535907956328895249117
SINGLE_ATOM_OFFSET_RHO05 = -0.3068528194400546905827679
CVAR_EXAMPLE_WITNESS = 2.482343081602913780955248

point = DiscreteMeasure(np.array([0]), np.array([1.0]))
half = DiscreteMeasure.uniform(np.array([0, 1]))


@st.composite
def instances(draw, max_n=16):
    n = draw(st.integers(1, max_n))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    mu = DiscreteMeasure(np.arange(n), rng.dirichlet(np.ones(n)))
    phi = rng.normal(scale=draw(st.floats(0.1, 10.0)), size=n)
    return phi, mu


class TestLogPartition:
    def test_examples(self):
        assert log_partition([3.2, 3.2, 3.2], DiscreteMeasure.uniform(np.arange(3))) == pytest.approx(3.2)
        assert log_partition([0.0, 0.0], half) == pytest.approx(0.0, abs=1e-15)
        mu = DiscreteMeasure(np.array([0, 1]), np.array([0.3, 0.7]))
        assert log_partition([1.0, 2.0], mu) == pytest.approx(LOG_PARTITION_37, abs=1e-14)

    def test_zero_weight_atoms_ignored(self):
        mu = DiscreteMeasure(np.array([0, 1]), np.array([1.0, 0.0]))
        assert log_partition([1.0, 500.0], mu) == pytest.approx(1.0)


class TestSolveAlpha:
    @pytest.mark.parametrize("c", [-40.0, 0.0, 2.5, 300.0])
    @pytest.mark.parametrize("r", [0.01, 0.3, 0.9])
    def test_single_atom_closed_form(self, c, r):
        assert solve_alpha([c], point, r) == pytest.approx(c + math.log1p(-r), abs=1e-12 * max(1, abs(c)))

    def test_constant_on_uniform(self):
        mu = DiscreteMeasure.uniform(np.arange(7))
        assert solve_alpha(np.full(7, 1.5), mu, 0.2) == pytest.approx(1.5 + math.log(0.8), abs=1e-12)

    def test_two_atoms_against_grid_scan(self):
        a = solve_alpha([0.0, 1.0], half, 0.3)
        assert a == pytest.approx(ALPHA_01_RHO03, abs=1e-12)
        grid = np.linspace(-1.0, 1.0, 10**7)
        resid = 0.5 * (np.exp(-grid) / (1 + 0.3 * np.exp(-grid))
                       + np.exp(1 - grid) / (1 + 0.3 * np.exp(1 - grid))) - 1
        root = grid[np.argmin(np.abs(resid))]
        assert abs(a - root) <= 2 * (grid[1] - grid[0])

    def test_bouchard_without_root(self):
        # total mass equals rho = 1: infimum approached as alpha -> -inf
        sol = safe_log_partition([0.0, 1.0], half, Rho.bouchard())
        assert sol.alpha_star == -math.inf
        assert sol.value == pytest.approx(-1 + 0.5, abs=1e-15)

    @settings(max_examples=200)
    @given(instances(), st.floats(1e-4, 0.95))
    def test_residual_and_upper_bracket(self, inst, r):
        phi, mu = inst
        sol = safe_log_partition(phi, mu, r)
        assert sol.residual <= 1e-12
        assert sol.alpha_star < log_partition(phi, mu)


class TestSafeLogPartition:
    def test_single_atom(self):
        for c in (0.0, -7.0, 12.0):
            assert safe_log_partition([c], point, 0.5).value == pytest.approx(c + SINGLE_ATOM_OFFSET_RHO05, abs=1e-13)
            assert safe_log_partition([c], point, 0.1).value == pytest.approx(c + SINGLE_ATOM_OFFSET_RHO01, abs=1e-13)

    def test_constant_on_uniform_matches_single_atom(self):
        mu = DiscreteMeasure.uniform(np.arange(9))
        v = safe_log_partition(np.full(9, 2.0), mu, 0.5).value
        assert v == pytest.approx(safe_log_partition([2.0], point, 0.5).value, abs=1e-13)

    def test_two_atoms(self):
        sol = safe_log_partition([0.0, 1.0], half, 0.3)
        assert sol.value == pytest.approx(FRHO_01_RHO03, abs=1e-13)

    @given(instances())
    def test_monotone_in_rho(self, inst):
        phi, mu = inst
        vals = [safe_log_partition(phi, mu, r).value for r in (0.5, 0.1, 0.01)]
        assert vals[0] <= vals[1] + 1e-9 <= vals[2] + 2e-9
        assert vals[2] <= log_partition(phi, mu) + 1e-9

    def test_converges_as_rho_vanishes(self):
        rng = np.random.default_rng(11)
        mu = DiscreteMeasure(np.arange(6), rng.dirichlet(np.ones(6)))
        phi = rng.normal(size=6)
        F = log_partition(phi, mu)
        gaps = [F - safe_log_partition(phi, mu, r).value for r in 10.0 ** -np.arange(1, 7)]
        assert all(0 <= g for g in gaps)
        assert all(a > b for a, b in zip(gaps, gaps[1:]))
        assert gaps[-1] < 1e-5


class TestSafeLogsumexp:
    def test_two_zeros(self):
        v = safe_logsumexp([0.0, 0.0], 0.3)
        assert v == pytest.approx(SAFE_LSE_00_RHO03, abs=1e-13)
        assert math.log(2) - 0.3 <= v <= math.log(2)

    def test_single_term(self):
        for r in (0.1, 0.5):
            assert safe_logsumexp([4.0], r) == pytest.approx(4.0 - 1 + (1 - 1 / r) * math.log1p(-r), abs=1e-13)

    def test_bad_input(self):
        with pytest.raises(ValueError):
            safe_logsumexp([], 0.1)
        with pytest.raises(ValueError):
            safe_logsumexp([0.0, math.inf], 0.1)

    @given(st.lists(st.floats(-20, 20), min_size=1, max_size=64), st.sampled_from([0.03, 0.1, 0.3, 1.0]))
    def test_sandwich(self, a, r):
        rho = Rho.bouchard() if r == 1.0 else r
        lse = logsumexp(a)
        v = safe_logsumexp(a, rho)
        assert lse - r - 1e-9 <= v <= lse + 1e-9

    @given(st.lists(st.floats(-20, 20), min_size=1, max_size=30), st.floats(-100, 100), st.floats(1e-3, 0.9))
    def test_shift(self, a, c, r):
        a = np.array(a)
        assert safe_logsumexp(a + c, r) == pytest.approx(safe_logsumexp(a, r) + c, abs=1e-10)

    @given(st.lists(st.floats(-20, 20), min_size=2, max_size=30), st.floats(1e-3, 0.9))
    def test_equals_uniform_measure_form(self, a, r):
        # sum over n terms equals log n plus the average form at rho / n
        a = np.array(a)
        n = a.size
        alt = math.log(n) + safe_log_partition(a, DiscreteMeasure.uniform(np.arange(n)), r / n).value
        assert safe_logsumexp(a, r) == pytest.approx(alt, abs=1e-9)


class TestCvar:
    def test_examples(self):
        mu = DiscreteMeasure.uniform(np.arange(4))
        phi = [1.0, 2.0, 3.0, 4.0]
        assert cvar(phi, mu, 0.5) == pytest.approx(3.5, abs=1e-15)
        assert cvar(phi, mu, 0.25) == pytest.approx(4.0, abs=1e-15)
        assert cvar([2.0] * 4, mu, 0.3) == pytest.approx(2.0, abs=1e-15)

    def test_grid_search_oracle(self):
        rng = np.random.default_rng(5)
        mu = DiscreteMeasure(np.arange(7), rng.dirichlet(np.ones(7)))
        phi = rng.normal(size=7)
        for r in (0.1, 0.37, 0.8):
            grid = np.linspace(-5, 5, 200001)
            obj = grid + (np.maximum(phi[None, :] - grid[:, None], 0) @ mu.weights) / r
            # piecewise linear with slopes bounded by 1/rho
            assert cvar(phi, mu, r) <= obj.min() + 1e-12
            assert cvar(phi, mu, r) >= obj.min() - (grid[1] - grid[0]) / r

    def test_mean_limit(self):
        rng = np.random.default_rng(6)
        mu = DiscreteMeasure(np.arange(5), rng.dirichlet(np.ones(5)))
        phi = rng.normal(size=5)
        assert cvar(phi, mu, 0.999999) == pytest.approx(float(phi @ mu.weights), abs=1e-5)

    def test_rejects_bouchard(self):
        with pytest.raises(ValueError):
            cvar([1.0], point, Rho.bouchard())

    @given(st.integers(1, 10), st.integers(0, 2**32 - 1), st.sampled_from([0.1, 0.2, 0.5, 0.7]))
    def test_sorted_tail_mean(self, k, seed, r):
        n = 10 * k
        phi = np.random.default_rng(seed).normal(scale=3.0, size=n)
        m = int(round(r * n))
        tail = float(np.mean(np.sort(phi)[n - m:]))
        got = cvar(phi, DiscreteMeasure.uniform(np.arange(n)), r)
        assert abs(got - tail) <= 1e-12 * max(1.0, abs(tail))


class TestCvarSandwich:
    def test_example(self):
        mu = DiscreteMeasure.uniform(np.arange(4))
        c = cvar_sandwich([1.0, 2.0, 3.0, 4.0], mu, 0.5, 1.0)
        assert c.lower == pytest.approx(3.5 + math.log(0.5) - 1, abs=1e-14)
        assert c.upper == pytest.approx(c.lower + 2, abs=1e-14)
        assert c.witness == pytest.approx(CVAR_EXAMPLE_WITNESS, abs=1e-12)
        assert c.holds

    def test_large_lambda(self):
        mu = DiscreteMeasure.uniform(np.arange(4))
        c = cvar_sandwich([1.0, 2.0, 3.0, 4.0], mu, 0.5, 100.0)
        assert c.upper - c.lower == pytest.approx(200.0)
        assert c.holds

    def test_constant_potential(self):
        mu = DiscreteMeasure.uniform(np.arange(3))
        c = cvar_sandwich([1.0, 1.0, 1.0], mu, 0.2, 2.0)
        assert c.holds
        assert c.lower == pytest.approx(1.0 + 2.0 * (math.log(0.2) - 1))

    def test_shrinks_to_cvar(self):
        rng = np.random.default_rng(8)
        mu = DiscreteMeasure(np.arange(6), rng.dirichlet(np.ones(6)))
        phi = rng.normal(size=6)
        ref = cvar(phi, mu, 0.3)
        for lam in (1e-2, 1e-3):
            c = cvar_sandwich(phi, mu, 0.3, lam)
            assert c.holds
            assert abs(c.witness - ref) <= lam * (abs(math.log(0.3) - 1) + 1 / 0.3)

    @given(instances(), st.sampled_from([0.1, 1.0, 10.0]), st.sampled_from([0.1, 0.5]))
    def test_holds(self, inst, lam, r):
        phi, mu = inst
        assert cvar_sandwich(phi, mu, r, lam).holds


class TestProp1:
    def test_single_atom(self):
        c = 3.0
        cert = prop1_bounds([c], point, 0.1)
        assert cert.witness == pytest.approx(c + SINGLE_ATOM_OFFSET_RHO01, abs=1e-13)
        assert cert.upper == c
        assert c - 0.1 <= cert.witness <= c
        assert cert.holds

    def test_constant_on_uniform(self):
        mu = DiscreteMeasure.uniform(np.arange(4))
        a = prop1_bounds(np.full(4, 3.0), mu, 0.1)
        b = prop1_bounds([3.0], point, 0.1)
        assert a.witness == pytest.approx(b.witness, abs=1e-13)
        assert a.lower == pytest.approx(b.lower, abs=1e-13)

    def test_random_ten_atoms(self):
        rng = np.random.default_rng(10)
        mu = DiscreteMeasure(np.arange(10), rng.dirichlet(np.ones(10)))
        cert = prop1_bounds(rng.normal(size=10), mu, 1e-3)
        assert cert.holds
        assert cert.upper - cert.lower < 0.05

    def test_rho_too_large(self):
        with pytest.raises(ValueError):
            prop1_bounds([0.0, 10.0], half, 0.9)

    @settings(max_examples=200)
    @given(instances(), st.sampled_from([0.5, 0.1, 0.03, 0.01, 0.001]))
    def test_holds_whenever_applicable(self, inst, r):
        phi, mu = inst
        try:
            cert = prop1_bounds(phi, mu, r)
        except ValueError:
            return
        assert cert.holds
