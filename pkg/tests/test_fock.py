import json
import math

import mpmath
import numpy as np
import pytest

from psq.canonical import position
from psq.errors import (
    DimMismatch,
    NegativeWeight,
    NotHermitian,
    NotPositive,
    TraceDrift,
    TruncationLoss,
    WeightSumDrift,
)
from psq.fock import (
    StateVector,
    Tolerances,
    coherent_vector,
    generating_from_json,
    generating_to_json,
    hermitize,
    make_coherent_projector,
    make_number_mixture,
    make_number_state,
    make_power_law,
    make_squeezed_vacuum,
    make_thermal,
    number_operator,
    poisson_tail,
    spectral_data,
    squeezed_vacuum_vector,
    validate_generating,
)


class TestValidateGenerating:
    def test_maximally_mixed_accepted(self):
        g = validate_generating(np.eye(5) / 5)
        assert np.allclose(g.op, np.eye(5) / 5)
        assert g.weights == pytest.approx((0.2,) * 5)

    def test_vacuum_projector_weights(self):
        op = np.zeros((4, 4))
        op[0, 0] = 1.0
        g = validate_generating(op)
        assert g.weights == (1.0, 0.0, 0.0, 0.0)
        assert g.min_eig == pytest.approx(0.0, abs=1e-15)

    def test_negative_eigenvalue_rejected(self):
        op = np.diag([0.51, 0.5, -0.01])
        with pytest.raises(NotPositive):
            validate_generating(op, Tolerances(pos=1e-8))

    def test_trace_drift_rejected(self):
        with pytest.raises(TraceDrift):
            validate_generating(np.diag([0.6, 0.5]))

    def test_small_drift_renormalized(self):
        g = validate_generating(np.diag([0.5, 0.5 + 5e-9]))
        assert np.trace(g.op).real == pytest.approx(1.0, abs=1e-15)
        assert g.trace_defect == pytest.approx(5e-9)

    def test_too_small_dimension(self):
        with pytest.raises(DimMismatch):
            validate_generating(np.ones((1, 1)))


class TestNumberMixtures:
    def test_vacuum(self):
        g = make_number_mixture([1, 0, 0], 6)
        assert g.op[0, 0] == 1 and np.count_nonzero(g.op) == 1

    def test_equal_mixture(self):
        g = make_number_mixture([0.5, 0.5], 4)
        assert np.allclose(np.diag(g.op), [0.5, 0.5, 0, 0])

    def test_thermal_tail_is_folded(self):
        # geometric tail beyond n=40 is s^40 ~ 9.1e-13, below tol_trace
        g = make_thermal(0.5, 40)
        assert abs(g.trace_defect) == pytest.approx(0.5**40, rel=1e-6)
        assert abs(g.trace_defect) < 1e-11
        assert np.trace(g.op).real == pytest.approx(1.0, abs=1e-15)

    def test_negative_weight(self):
        with pytest.raises(NegativeWeight):
            make_number_mixture([1.1, -0.1], 3)

    def test_weight_sum_drift(self):
        with pytest.raises(WeightSumDrift):
            make_number_mixture([0.5, 0.4], 3)

    def test_too_many_weights(self):
        with pytest.raises(DimMismatch):
            make_number_mixture([0.25] * 4, 3)

    def test_commutes_with_number_operator(self):
        g = make_thermal(0.3, 30)
        n = number_operator(30)
        assert np.abs(g.op @ n - n @ g.op).max() == 0.0

    def test_retruncation_keeps_weights(self):
        g = make_thermal(0.2, 20)
        g2 = g.at_dim(50)
        assert g2.dim == 50
        assert g2.weights[:5] == pytest.approx(g.weights[:5], rel=1e-6)

    def test_power_law_normalized(self):
        g = make_power_law(2.0, 100)
        assert np.trace(g.op).real == pytest.approx(1.0)


class TestCoherent:
    def test_alpha_zero_is_vacuum(self):
        g = make_coherent_projector(0.0, 10)
        target = np.zeros((10, 10))
        target[0, 0] = 1
        assert np.allclose(g.op, target)

    def test_truncation_loss_small(self):
        g = make_coherent_projector(1.0, 40)
        loss = g.params["truncation_loss"]
        # independent oracle: the Poisson(1) tail summed in high precision
        with mpmath.workdps(80):
            exact = mpmath.nsum(lambda n: mpmath.e ** -1 / mpmath.factorial(n), [40, mpmath.inf])
        assert loss < 1e-30
        assert loss == pytest.approx(float(exact), rel=1e-8)

    def test_truncation_loss_raises(self):
        with pytest.raises(TruncationLoss):
            make_coherent_projector(8.0, 40)

    def test_poisson_tail_order_one(self):
        assert poisson_tail(64.0, 40) > 0.99

    def test_coherent_vector_is_eigenvector_of_lowering(self):
        a = 0.7 - 0.4j
        v = coherent_vector(a, 60)
        low = np.diag(np.sqrt(np.arange(1, 60)), 1)
        assert np.abs((low @ v - a * v)[:40]).max() < 1e-14


class TestSpectralData:
    def test_identity(self):
        ev, _ = spectral_data(np.eye(4))
        assert np.allclose(ev, 1.0)

    def test_diagonal(self):
        ev, _ = spectral_data(np.diag([0.7, 0.3]))
        assert ev == pytest.approx([0.3, 0.7])

    def test_reconstruction(self, rng):
        a = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
        a = hermitize(a)
        ev, v = spectral_data(a)
        assert np.linalg.norm(a - (v * ev) @ v.conj().T) <= 1e-12 * np.linalg.norm(a)

    def test_not_hermitian(self):
        with pytest.raises(NotHermitian):
            spectral_data(np.array([[0, 1], [0, 0]], dtype=complex))

    def test_truncated_position_eigenvalues_are_hermite_roots(self):
        # each eigenvalue must be a root of H_60: the Newton step computed in
        # 60-digit arithmetic is negligible
        d = 60
        ev, _ = spectral_data(position(d))
        with mpmath.workdps(60):
            for x in ev:
                h = mpmath.hermite(d, x)
                dh = 2 * d * mpmath.hermite(d - 1, x)
                assert abs(float(h / dh)) < 1e-11
        assert np.all(np.diff(ev) > 0)


class TestHermitize:
    def test_idempotent_and_exact(self, rng):
        a = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
        h = hermitize(a)
        assert np.array_equal(h, h.conj().T)
        assert np.array_equal(hermitize(h), h)


class TestStates:
    def test_state_vector_normalized(self):
        s = StateVector.from_amplitudes([3, 4j])
        assert s.is_normalized()
        assert s.dim == 2

    def test_squeezed_vacuum_matches_projected_gaussian(self):
        # oracle: project exp(-x^2/(4 var)) onto Hermite functions by quadrature
        var, d = 0.125, 60
        x, w = np.polynomial.hermite.hermgauss(200)
        # integrand psi(x) h_n(x) written as e^{-x^2} * g(x)
        psi = (2 * math.pi * var) ** -0.25 * np.exp(-(x**2) / (4 * var) + x**2)
        hn = np.empty((d, x.size))
        hn[0] = math.pi**-0.25 * np.exp(-(x**2) / 2)
        hn[1] = math.sqrt(2) * x * hn[0]
        for n in range(2, d):
            hn[n] = math.sqrt(2 / n) * x * hn[n - 1] - math.sqrt((n - 1) / n) * hn[n - 2]
        amps = hn @ (w * psi)
        v = squeezed_vacuum_vector(var, d)
        assert np.abs(v.real - amps).max() < 1e-10

    def test_squeezed_variance(self):
        g = make_squeezed_vacuum(2.0, 80)
        q = position(160)[:80, :80]
        assert np.trace(q @ q @ g.op).real == pytest.approx(2.0, abs=1e-9)


class TestJSON:
    @pytest.mark.parametrize(
        "g",
        [
            make_thermal(0.2, 12),
            make_coherent_projector(0.3 + 0.2j, 12),
            make_squeezed_vacuum(0.25, 12, max_loss=1e-3),
        ],
        ids=["mixture", "coherent", "matrix"],
    )
    def test_round_trip(self, g):
        obj = json.loads(json.dumps(generating_to_json(g)))
        back = generating_from_json(obj)
        assert back.dim == g.dim
        assert np.abs(back.op - g.op).max() < 1e-14

    def test_pairs_format(self):
        obj = generating_to_json(make_squeezed_vacuum(0.25, 4, max_loss=1.0))
        assert obj["kind"] == "matrix"
        assert len(obj["payload"]["entries"][0][0]) == 2

    def test_dim_mismatch(self):
        obj = generating_to_json(make_squeezed_vacuum(0.25, 4, max_loss=1.0))
        obj["dim"] = 5
        with pytest.raises(DimMismatch):
            generating_from_json(obj)

    def test_number_state_json(self):
        obj = generating_to_json(make_number_state(2, 5))
        assert obj == {"dim": 5, "kind": "number_mixture", "payload": {"weights": [0, 0, 1.0, 0, 0]}}
