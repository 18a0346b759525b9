"""Tests for conditional min-, max- and collision entropies."""
import math

import numpy as np
import pytest
from hypothesis import given, settings as hypothesis_settings, strategies as st
from scipy import linalg as sla
from scipy import optimize

from pdbench.config import settings
from pdbench.errors import (
    EntropyConvergenceError,
    LayoutError,
    PreconditionError,
    SingularConditionerError,
)
from pdbench.linalg import (
    DensityOperator,
    SubsystemLayout,
    apply_local,
    maximally_mixed,
    partial_trace,
    pure_state,
    tensor,
    weighted_two_norm,
)
from pdbench.services.channel_service import channel_service
from pdbench.services.entropy_service import EntropyResult, entropy_service
from pdbench.services.sampling_service import sampling_service

AB = SubsystemLayout.of(("A", 2), ("B", 2))
B = SubsystemLayout.of(("B", 2))
GAP = settings.sdp_gap_tol

seeds = st.integers(min_value=0, max_value=2**32 - 1)

PAULIS = (
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]]),
    np.array([[1, 0], [0, -1]], dtype=complex),
)


def _phi():
    return pure_state(np.array([1, 0, 0, 1]) / math.sqrt(2), AB)


def _bloch(vector):
    """Qubit state with Bloch vector squashed into the open unit ball."""
    v = np.asarray(vector, dtype=float)
    norm = np.linalg.norm(v)
    x = v * (math.tanh(norm) / norm) if norm > 0 else v
    return DensityOperator((np.eye(2) + sum(c * p for c, p in zip(x, PAULIS))) / 2, B)


class TestEntropyResult:
    def test_shift_moves_interval(self):
        result = EntropyResult(value=1.0, lower=0.5, upper=1.5, certificate=1.0).shifted(2.0)
        assert (result.value, result.lower, result.upper) == (3.0, 2.5, 3.5)
        assert result.safe_lower == 2.5

    def test_safe_lower_without_interval(self):
        assert EntropyResult(value=0.7).safe_lower == 0.7


class TestFixedConditioner:
    """Tests for the closed forms with a given ς."""

    def test_min_entropy_of_uniform_product(self, rng):
        varsigma = sampling_service.random_density(B, rng)
        rho = tensor(maximally_mixed(SubsystemLayout.of(("A", 3))), varsigma)
        assert entropy_service.h_min_fixed(rho, varsigma).value == pytest.approx(math.log2(3))

    def test_min_entropy_of_maximally_entangled(self):
        assert entropy_service.h_min_fixed(_phi(), maximally_mixed(B)).value == pytest.approx(-1.0)

    def test_min_entropy_matches_bisection(self, rng):
        rho = sampling_service.random_density(AB, rng)
        varsigma = sampling_service.random_density(B, rng)
        lifted = np.kron(np.eye(2), varsigma.matrix)
        low, high = -10.0, 10.0
        for _ in range(80):
            mid = (low + high) / 2
            feasible = np.linalg.eigvalsh(2.0 ** -mid * lifted - rho.matrix)[0] >= 0
            low, high = (mid, high) if feasible else (low, mid)
        assert entropy_service.h_min_fixed(rho, varsigma).value == pytest.approx(low, abs=1e-9)

    def test_singular_conditioner(self):
        singular = DensityOperator(np.diag([1.0, 0.0]), B)
        with pytest.raises(SingularConditionerError):
            entropy_service.h_min_fixed(_phi(), singular)
        with pytest.raises(SingularConditionerError):
            entropy_service.h2_fixed(_phi(), singular)

    def test_conditioner_must_be_a_factor(self):
        with pytest.raises(LayoutError):
            entropy_service.h_min_fixed(_phi(), maximally_mixed(SubsystemLayout.of(("C", 2))))
        with pytest.raises(LayoutError):
            entropy_service.h_min_fixed(_phi(), maximally_mixed(AB))

    def test_max_entropy_of_uniform_product(self, rng):
        varsigma = sampling_service.random_density(B, rng)
        rho = tensor(maximally_mixed(SubsystemLayout.of(("A", 4))), varsigma)
        assert entropy_service.h_max_fixed(rho, varsigma).value == pytest.approx(2.0)

    def test_max_entropy_of_pure_product(self, rng):
        varsigma = sampling_service.random_density(B, rng)
        psi = pure_state(sampling_service.random_vector(2, rng), SubsystemLayout.of(("A", 2)))
        assert entropy_service.h_max_fixed(tensor(psi, varsigma), varsigma).value == pytest.approx(0.0, abs=1e-9)

    def test_max_entropy_ignores_null_space(self, rng):
        varsigma = sampling_service.random_density(SubsystemLayout.of(("B", 3)), rng)
        psi = pure_state(sampling_service.random_vector(4, rng), SubsystemLayout.of(("A", 4)))
        assert entropy_service.h_max_fixed(tensor(psi, varsigma), varsigma).value == pytest.approx(0.0, abs=1e-9)

    def test_max_entropy_direct_formula(self, rng):
        rho = sampling_service.random_density(AB, rng)
        varsigma = sampling_service.random_density(B, rng)
        root = np.kron(np.eye(2), sla.sqrtm(varsigma.matrix))
        fidelity = np.trace(sla.sqrtm(root @ rho.matrix @ root)).real
        assert entropy_service.h_max_fixed(rho, varsigma).value == pytest.approx(2 * math.log2(fidelity))

    def test_collision_entropy_of_uniform_product(self, rng):
        varsigma = sampling_service.random_density(B, rng)
        rho = tensor(maximally_mixed(SubsystemLayout.of(("A", 2))), varsigma)
        assert entropy_service.h2_fixed(rho, varsigma).value == pytest.approx(1.0)

    def test_collision_entropy_of_pure_state_with_trivial_condition(self, rng):
        layout = SubsystemLayout.of(("A", 3), ("B", 1))
        psi = pure_state(sampling_service.random_vector(3, rng), layout)
        trivial = DensityOperator(np.eye(1), SubsystemLayout.of(("B", 1)))
        assert entropy_service.h2_fixed(psi, trivial).value == pytest.approx(0.0, abs=1e-12)

    def test_collision_entropy_is_weighted_norm(self, rng):
        rho = sampling_service.random_density(AB, rng)
        varsigma = sampling_service.random_density(B, rng)
        expected = -math.log2(weighted_two_norm(rho, varsigma) ** 2)
        assert entropy_service.h2_fixed(rho, varsigma).value == pytest.approx(expected)

    @hypothesis_settings(max_examples=200, deadline=None)
    @given(seed=seeds, d_a=st.integers(1, 3), d_b=st.integers(1, 3))
    def test_collision_entropy_dominates_min_entropy(self, seed, d_a, d_b):
        rng = np.random.default_rng(seed)
        rho = sampling_service.random_density(SubsystemLayout.of(("A", d_a), ("B", d_b)), rng)
        varsigma = sampling_service.random_density(SubsystemLayout.of(("B", d_b)), rng)
        h2 = entropy_service.h2_fixed(rho, varsigma).value
        assert h2 >= entropy_service.h_min_fixed(rho, varsigma).value - 1e-9

    @hypothesis_settings(max_examples=50, deadline=None)
    @given(seed=seeds, scale=st.floats(min_value=1e-3, max_value=1.0))
    def test_scaling_shifts_fixed_min_entropy(self, seed, scale):
        rng = np.random.default_rng(seed)
        rho = sampling_service.random_density(AB, rng)
        varsigma = sampling_service.random_density(B, rng)
        scaled = DensityOperator(scale * rho.matrix, AB)
        expected = entropy_service.h_min_fixed(rho, varsigma).value - math.log2(scale)
        assert entropy_service.h_min_fixed(scaled, varsigma).value == pytest.approx(expected, abs=1e-9)


class TestOptimizedMinEntropy:
    """Tests for the SDP and its certificate."""

    def test_trivial_conditioning_system(self):
        rho = maximally_mixed(SubsystemLayout.of(("A", 4), ("B", 1)))
        result = entropy_service.h_min_opt(rho, ["B"])
        assert result.value == pytest.approx(2.0)
        assert result.certificate == 0.0

    def test_maximally_entangled(self):
        result = entropy_service.h_min_opt(_phi(), ["B"])
        assert result.value == pytest.approx(-1.0, abs=GAP)
        assert result.lower <= -1.0 + 1e-9 <= result.upper + 2e-9
        assert result.certificate <= GAP

    def test_uniform_product(self, rng):
        rho = tensor(maximally_mixed(SubsystemLayout.of(("A", 2))), sampling_service.random_density(B, rng))
        assert entropy_service.h_min_opt(rho, ["B"]).value == pytest.approx(1.0, abs=GAP)

    def test_certificate_and_conditioner(self, rng):
        rho = sampling_service.random_density(AB, rng)
        result = entropy_service.h_min_opt(rho, ["B"])
        assert result.lower <= result.value <= result.upper
        assert result.certificate <= GAP
        assert result.conditioner.layout == B
        achieved = entropy_service.h_min_fixed(rho, result.conditioner).value
        assert achieved == pytest.approx(result.value, abs=1e-6)

    def test_matches_conditioner_search(self, rng):
        """Test the SDP against a grid over Bloch vectors refined by a local search."""
        rho = sampling_service.random_density(AB, rng)

        def objective(vector):
            return -entropy_service.h_min_fixed(rho, _bloch(vector)).value

        grid = np.linspace(-2.0, 2.0, 9)
        start = min(((x, y, z) for x in grid for y in grid for z in grid), key=objective)
        refined = optimize.minimize(objective, start, method="Nelder-Mead", options={"xatol": 1e-9, "fatol": 1e-12})
        assert entropy_service.h_min_opt(rho, ["B"]).value == pytest.approx(-refined.fun, abs=1e-4)

    def test_classical_register_averages_guessing_probability(self, rng):
        """Test H_min(A|BK) = −log Σ_k p_k 2^{−H_min(A|B)_k} for a classical K."""
        weights = (0.3, 0.7)
        parts = [sampling_service.random_density(AB, rng) for _ in weights]
        flags = [np.diag([1.0, 0.0]), np.diag([0.0, 1.0])]
        matrix = sum(p * np.kron(part.matrix, flag) for p, part, flag in zip(weights, parts, flags))
        rho = DensityOperator(matrix, SubsystemLayout.of(("A", 2), ("B", 2), ("K", 2)))
        guessing = sum(p * 2.0 ** -entropy_service.h_min_opt(part, ["B"]).value for p, part in zip(weights, parts))
        assert entropy_service.h_min_opt(rho, ["B", "K"]).value == pytest.approx(-math.log2(guessing), abs=1e-6)

    def test_subnormalized_shift(self, rng):
        rho = sampling_service.random_density(AB, rng)
        half = DensityOperator(0.5 * rho.matrix, AB)
        full = entropy_service.h_min_opt(rho, ["B"])
        assert entropy_service.h_min_opt(half, ["B"]).value == pytest.approx(full.value + 1.0, abs=1e-9)

    def test_zero_operator(self):
        zero = DensityOperator(np.zeros((4, 4)), AB)
        assert entropy_service.h_min_opt(zero, ["B"]).value == math.inf

    def test_isometry_on_conditioned_system(self, rng):
        rho = sampling_service.random_density(AB, rng)
        v = sampling_service.random_isometry(2, 3, rng)
        lifted = apply_local(rho, v, ["A"], new_systems=[("A", 3)])
        original = entropy_service.h_min_opt(rho, ["B"]).value
        assert entropy_service.h_min_opt(lifted, ["B"]).value == pytest.approx(original, abs=2 * GAP)

    def test_size_limit(self, rng, monkeypatch):
        monkeypatch.setattr(settings, "max_sdp_dim", 3)
        with pytest.raises(PreconditionError):
            entropy_service.h_min_opt(sampling_service.random_density(AB, rng), ["B"])

    def test_gap_above_tolerance(self, rng):
        with pytest.raises(EntropyConvergenceError) as info:
            entropy_service.h_min_opt(sampling_service.random_density(AB, rng), ["B"], tol=-1.0)
        assert info.value.gap is not None

    def test_empty_conditioned_system(self):
        with pytest.raises(LayoutError):
            entropy_service.h_min_opt(_phi(), ["A", "B"])


class TestMaxEntropy:
    """Tests for the purification route to H_max."""

    def test_maximally_entangled(self):
        assert entropy_service.h_max_opt(_phi(), ["B"]).value == pytest.approx(-1.0, abs=1e-9)

    def test_uniform_product(self, rng):
        rho = tensor(maximally_mixed(SubsystemLayout.of(("A", 2))), sampling_service.random_density(B, rng))
        assert entropy_service.h_max_opt(rho, ["B"]).value == pytest.approx(1.0, abs=GAP)

    def test_dominates_fixed_conditioners(self, rng):
        rho = sampling_service.random_density(AB, rng)
        optimum = entropy_service.h_max_opt(rho, ["B"]).value
        for _ in range(20):
            varsigma = sampling_service.random_density(B, rng)
            assert optimum >= entropy_service.h_max_fixed(rho, varsigma).value - GAP

    @hypothesis_settings(max_examples=50, deadline=None)
    @given(seed=seeds)
    def test_duality_on_pure_tripartite_state(self, seed):
        rng = np.random.default_rng(seed)
        layout = SubsystemLayout.of(("A", 2), ("B", 2), ("C", 2))
        psi = pure_state(sampling_service.random_vector(8, rng), layout)
        h_max = entropy_service.h_max_opt(partial_trace(psi, ["A", "B"]), ["B"]).value
        h_min = entropy_service.h_min_opt(partial_trace(psi, ["A", "C"]), ["C"]).value
        assert h_max == pytest.approx(-h_min, abs=2 * GAP)

    def test_complement_duality_for_dephasing(self):
        channel = channel_service.dephasing(2)
        complement = channel_service.complementary(channel)
        h_max = entropy_service.h_max_opt(complement.channel.choi, ["B"]).value
        h_min = entropy_service.h_min_opt(channel.choi, ["E"]).value
        assert h_max == pytest.approx(-h_min, abs=2 * GAP)

    def test_complement_duality_for_random_channel(self, rng):
        channel = channel_service.random_kraus(2, 2, 2, rng)
        complement = channel_service.complementary(channel)
        h_max = entropy_service.h_max_opt(complement.channel.choi, ["B"]).value
        h_min = entropy_service.h_min_opt(channel.choi, ["E"]).value
        assert h_max == pytest.approx(-h_min, abs=2 * GAP)

    def test_purify_reproduces_state(self, rng):
        rho = sampling_service.random_density(AB, rng)
        psi = entropy_service.purify(rho)
        assert partial_trace(psi, ["A", "B"]).allclose(rho, atol=1e-10)

    def test_purify_zero(self):
        with pytest.raises(PreconditionError):
            entropy_service.purify(DensityOperator(np.zeros((4, 4)), AB))
