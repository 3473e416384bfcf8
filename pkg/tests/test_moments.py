import math

import numpy as np
import pytest
from scipy.integrate import quad

from psq.canonical import momentum, position, translation_unitary
from psq.errors import DomainDiagnosticFailed, NotDiagonal, TailMassExceeded
from psq.fock import (
    make_coherent_projector,
    make_number_mixture,
    make_number_state,
    make_power_law,
    make_squeezed_vacuum,
    make_thermal,
    validate_generating,
)
from psq.grid import cartesian_grid, polar_grid
from psq.moments import (
    hs_domain_scan,
    hs_norm_sq,
    moment_coefficients,
    moment_operator,
    moment_operator_quadrature,
    noise_operator,
    noise_report,
    optimal_T_scan,
    oscillator_energy_moment,
    quadrature_moments,
    supported_block,
    variances,
)


def spec_norm(a):
    return float(np.linalg.norm(a, 2))


def husimi_mean(gen, col, grid):
    """Oracle for Tr[Q T]: first moment of the Husimi density of T, i.e. the
    outcome density of the vacuum-generated observable in the state T,
    integrated over the grid nodes."""
    from psq.povm import outcome_density

    total = 0.0
    for i in range(grid.n_cells):
        pts, w = grid.cell_nodes(i)
        total += float(w @ (pts[:, col] * outcome_density(gen, make_number_state(0, gen.dim), pts)))
    return total


class TestCoefficients:
    def test_vacuum_first(self):
        mc = moment_coefficients(1, make_number_state(0, 10))
        assert mc.coeffs[0] == pytest.approx(0.0, abs=1e-15)
        assert mc.coeffs[1] == 1.0

    def test_vacuum_second(self):
        mc = moment_coefficients(2, make_number_state(0, 10))
        assert mc.coeffs == pytest.approx([0.5, 0.0, 1.0], abs=1e-15)
        l2 = moment_operator(2, make_number_state(0, 10))
        q2 = (position(20) @ position(20))[:10, :10]
        assert np.abs(l2 - (q2 + 0.5 * np.eye(10))).max() < 1e-14

    @pytest.mark.parametrize("q0,p0", [(1.0, 0.0), (-0.6, 1.4)])
    def test_coherent_linear_coefficient(self, q0, p0):
        gen = make_coherent_projector(complex(q0, p0) / math.sqrt(2), 60)
        mc = moment_coefficients(2, gen)
        # oracle: the Husimi mean of the coherent projector, by grid quadrature
        mean = husimi_mean(gen, 0, cartesian_grid(-9, 9, -9, 9, 18, 18))
        assert mean == pytest.approx(q0, abs=1e-9)
        assert mc.coeffs[1] == pytest.approx(-2 * mean, abs=1e-8)

    @pytest.mark.parametrize("k", [1, 2, 3, 4])
    def test_leading_one_and_real(self, k):
        mc = moment_coefficients(k, make_squeezed_vacuum(0.5, 40), axis="y")
        assert mc.coeffs[-1] == 1.0
        assert mc.imag_max <= 1e-10
        assert np.isrealobj(mc.coeffs)

    def test_domain_check_flags_power_law(self):
        with pytest.raises(DomainDiagnosticFailed):
            moment_coefficients(2, make_power_law(2.0, 40), check_domain=True)

    def test_invalid_order(self):
        with pytest.raises(ValueError):
            moment_coefficients(0, make_number_state(0, 5))


@pytest.mark.parametrize(
    "gen",
    [
        make_thermal(0.5, 40),
        make_coherent_projector(0.3 - 0.8j, 40),
        make_squeezed_vacuum(0.25, 40),
        make_number_mixture([0.2, 0.3, 0.5], 40),
    ],
    ids=["thermal", "coherent", "squeezed", "mixture"],
)
def test_first_moment_identity(gen):
    for axis, op in (("x", position(40)), ("y", momentum(40))):
        mean = float(np.trace(op @ gen.op).real)
        want = op - mean * np.eye(40)
        assert np.abs(moment_operator(1, gen, axis) - want).max() <= 1e-14


@pytest.fixture(scope="module")
def default_scale(default_grid):
    return quadrature_moments(make_number_state(0, 60), default_grid, [("x", 1), ("x", 2), ("y", 1)])


@pytest.fixture(scope="module")
def adequate():
    grid = cartesian_grid(-16, 16, -16, 16, 32, 32, order=10)
    return quadrature_moments(make_number_state(0, 40), grid, [("x", 1), ("x", 2), ("y", 1)])


class TestQuadratureOracle:
    @staticmethod
    def _closed(axis, k, d):
        return moment_operator(k, make_number_state(0, d), axis)

    @pytest.mark.parametrize("axis,k", [("x", 1), ("x", 2), ("y", 1)])
    def test_default_scale_interior(self, default_scale, axis, k):
        # literal budget at window [-8, 8]^2 and D=60; fails for the window
        # reason recorded in the ledger
        diff = default_scale.ops[(axis, k)] - self._closed(axis, k, 60)
        assert spec_norm(diff[:30, :30]) < 1e-5

    @pytest.mark.parametrize("axis,k", [("x", 1), ("x", 2), ("y", 1)])
    def test_default_scale_supported_block(self, default_scale, axis, k):
        # block whose leaked moment mass, tail * 8^k, stays below 1e-6
        b = supported_block(default_scale.tail_mass, 1e-6 / 8**k)
        assert b >= 5
        diff = default_scale.ops[(axis, k)] - self._closed(axis, k, 60)
        assert spec_norm(diff[:b, :b]) < 1e-5

    @pytest.mark.parametrize("axis,k", [("x", 1), ("x", 2), ("y", 1)])
    def test_adequate_window_interior(self, adequate, axis, k):
        assert adequate.tail_mass[:20].max() < 1e-12
        diff = adequate.ops[(axis, k)] - self._closed(axis, k, 40)
        assert spec_norm(diff[:20, :20]) < 1e-8

    def test_tail_policy_fail(self):
        grid = cartesian_grid(-4, 4, -4, 4, 8, 8)
        with pytest.raises(TailMassExceeded):
            moment_operator_quadrature(1, make_number_state(0, 20), "x", grid, policy="fail")

    def test_rows_restrict(self):
        grid = cartesian_grid(-6, 6, -6, 6, 12, 12)
        full = moment_operator_quadrature(2, make_thermal(0.1, 16), "x", grid)
        part = moment_operator_quadrature(2, make_thermal(0.1, 16), "x", grid, rows=6)
        assert np.abs(full[:6, :6] - part).max() < 1e-14

    def test_supported_block(self):
        assert supported_block(np.array([0, 1e-9, 1e-3, 0]), 1e-6) == 2
        assert supported_block(np.zeros(4), 1e-6) == 4


class TestDomainScan:
    def test_vacuum_constant(self):
        scan = hs_domain_scan(make_number_state(0, 25), 3)
        assert scan.verdict == "bounded"
        # <0|Q^6|0> = 15/8
        assert np.allclose(scan.values, 15 / 8, atol=1e-12)

    def test_thermal_limit(self):
        s = 0.5
        scan = hs_domain_scan(make_thermal(s, 30), 1, dims=[30, 60, 120, 240])
        assert scan.verdict == "bounded"
        # oracle: partial sums of (1 - s) s^n (n + 1/2)
        partial = math.fsum((1 - s) * s**n * (n + 0.5) for n in range(400))
        assert partial == pytest.approx(1.5, abs=1e-15)
        assert scan.values[-1] == pytest.approx(partial, abs=1e-9)

    def test_power_law_diverges(self):
        scan = hs_domain_scan(make_power_law(2.0, 25), 1)
        assert scan.verdict == "diverging"
        assert np.all(np.diff(scan.values) > 0)

    def test_hs_norm_number_state(self):
        # ||Q |n>||^2 = n + 1/2
        assert hs_norm_sq(make_number_state(3, 10), 1) == pytest.approx(3.5, abs=1e-13)

    def test_matrix_form_rejected(self):
        with pytest.raises(ValueError):
            hs_domain_scan(validate_generating(np.full((3, 3), 1 / 3)), 1)


class TestNoise:
    def test_vacuum(self):
        rep = noise_report(make_number_state(0, 60))
        assert rep.var_q == pytest.approx(0.5, abs=1e-14)
        assert rep.var_p == pytest.approx(0.5, abs=1e-14)
        assert rep.product == pytest.approx(0.25, abs=1e-14)
        assert rep.domain == {"x": "bounded", "y": "bounded"}

    @pytest.mark.parametrize("n", [1, 2, 5])
    def test_number_states(self, n):
        rep = noise_report(make_number_state(n, 60))
        assert rep.var_q == pytest.approx(n + 0.5, abs=1e-12)
        assert rep.product == pytest.approx((n + 0.5) ** 2, abs=1e-11)

    @pytest.mark.parametrize(
        "gen",
        [make_number_state(0, 60), make_thermal(0.3, 60), make_coherent_projector(0.5 + 0.5j, 60)],
        ids=["vacuum", "thermal", "coherent"],
    )
    def test_noise_is_scalar(self, gen):
        rep = noise_report(gen)
        for a in ("x", "y"):
            assert rep.offdiag[a] <= 1e-8
            assert rep.spread[a] <= 1e-8
        assert rep.scalar["x"] == pytest.approx(rep.var_q, abs=1e-8)

    def test_noise_operator_full_block_is_not_scalar(self):
        # the truncation artifact lives in the top rows only
        r = noise_operator(make_number_state(0, 20))
        assert abs(r[-1, -1] - 0.5) > 1

    def test_squeezed(self):
        rep = noise_report(make_squeezed_vacuum(0.125, 80), check_domain=False)
        assert rep.var_q == pytest.approx(0.125, abs=1e-9)
        assert rep.var_p >= 2 - 1e-8
        assert rep.product >= 0.25 - 1e-9

    def test_variances_from_traces(self):
        mq, mp, vq, vp = variances(make_coherent_projector(1.0, 60))
        assert mq == pytest.approx(math.sqrt(2), abs=1e-12)
        assert mp == pytest.approx(0.0, abs=1e-12)
        assert vq == pytest.approx(0.5, abs=1e-12) and vp == pytest.approx(0.5, abs=1e-12)

    def test_domain_failure(self):
        with pytest.raises(DomainDiagnosticFailed):
            noise_report(make_power_law(2.0, 30))


class TestOptimalScan:
    def test_vacuum_unique(self):
        cands = [
            ("vacuum", make_number_state(0, 60)),
            ("one", make_number_state(1, 60)),
            ("thermal0.5", make_thermal(0.5, 60)),
            ("coherent1", make_coherent_projector(1.0, 60)),
        ]
        rows = optimal_T_scan(cands)
        names = [r["name"] for r in rows]
        assert "coherent1" not in names
        assert [r["name"] for r in rows if r["optimal"]] == ["vacuum"]
        assert names[0] == "vacuum"

    def test_displaced_vacuum_filtered(self):
        gen = make_coherent_projector(0.4 - 0.1j, 40)
        assert optimal_T_scan([("shifted", gen)]) == []

    def test_empty(self):
        assert optimal_T_scan([]) == []

    def test_squeezed_attains_without_symmetry(self):
        rows = optimal_T_scan([("sq", make_squeezed_vacuum(0.125, 80))], symmetry_required=False)
        assert rows[0]["attains_bound"] and not rows[0]["symmetric"]
        assert rows[0]["optimal"]


def test_moment_covariance():
    # U(a, 0)* L(x) U(a, 0) = L(x) + a I on the interior block
    d, a = 60, 0.5
    gen = make_thermal(0.4, d)
    lx = moment_operator(1, gen)
    u = translation_unitary(a, 0.0, d)
    lhs = u.conj().T @ lx @ u
    assert spec_norm((lhs - lx - a * np.eye(d))[:30, :30]) <= 1e-5


@pytest.fixture(scope="module")
def vacuum_energy():
    grid = polar_grid(12.0, 24, 16)
    return oscillator_energy_moment(1, make_number_state(0, 24), grid, rows=12)


class TestEnergyMoment:
    def test_diagonal_is_n_plus_one(self, vacuum_energy):
        # oracle: radial quadrature of r^2/2 against the Husimi density of |n>
        for n in range(12):
            dens = lambda r, n=n: (r * r / 2) ** n * math.exp(-r * r / 2) / math.factorial(n) * r
            mean = quad(lambda r: r * r / 2 * dens(r), 0, 40, limit=200)[0]
            assert mean == pytest.approx(n + 1, rel=1e-10)
            assert vacuum_energy.diagonal[n] == pytest.approx(mean, abs=1e-6)

    def test_strictly_increasing(self, vacuum_energy):
        assert np.all(np.diff(vacuum_energy.diagonal) > 0)

    def test_commutes_with_number(self, vacuum_energy):
        assert vacuum_energy.commutator_defect < 1e-8

    def test_not_diagonal(self):
        with pytest.raises(NotDiagonal):
            oscillator_energy_moment(1, make_coherent_projector(0.5, 10), polar_grid(5, 4, 8))
