"""Experiment drivers: Monte Carlo left-hand sides against exactly computed right-hand sides."""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from ..config import settings
from ..errors import ConfigError, PreconditionError
from ..linalg import (
    DensityOperator,
    Operator,
    SubsystemLayout,
    maximally_mixed,
    trace_norm,
    two_norm,
    weighted_two_norm,
)
from ..models import (
    ChannelSpec,
    ConditionerPolicy,
    ExperimentConfig,
    ExperimentReport,
    Lemma7Report,
    Mode,
    StateSpec,
    SweepSpec,
    TwirlCaseResult,
    TwirlReport,
)
from .channel_service import CpMap, channel_service
from .dsp_service import DspDecomposition, dsp_service
from .entropy_service import EntropyResult, entropy_service
from .preset_service import preset_service
from .sampling_service import RngStream, StreamDomain, classify_twirl, sampling_service

logger = logging.getLogger(__name__)

# Instance generators retry this often before giving up on the max_sdp_dim cap
_INSTANCE_ATTEMPTS = 200


@dataclass(frozen=True)
class LhsEstimate:
    mean: float
    stderr: float
    samples: int


@dataclass
class RhsBound:
    terms: Dict[str, float] = field(default_factory=dict)
    total: float = 0.0
    sdp_gap: Optional[float] = None

    def record(self, name: str, result: EntropyResult) -> float:
        """Store the certified lower end of an entropy and track the worst duality gap."""
        self.terms[name] = result.safe_lower
        if result.certificate is not None:
            self.sdp_gap = max(self.sdp_gap or 0.0, result.certificate)
        return result.safe_lower


def decay(entropy: float) -> float:
    """2^{−H/2}, with H = +∞ giving 0."""
    if entropy == math.inf:
        return 0.0
    return 2.0 ** (-0.5 * entropy)


def _sample_values(evaluate: Callable[[int], float], samples: int) -> np.ndarray:
    if settings.workers <= 1:
        return np.array([evaluate(i) for i in range(samples)])
    with ThreadPoolExecutor(max_workers=settings.workers) as pool:
        return np.array(list(pool.map(evaluate, range(samples))))


def _summarize(values: np.ndarray) -> LhsEstimate:
    n = int(values.size)
    return LhsEstimate(mean=float(np.mean(values)), stderr=float(np.std(values, ddof=1) / math.sqrt(n)), samples=n)


def _reference(psi: Operator, system: str) -> list[str]:
    return [name for name in psi.layout.names if name != system]


class ExperimentService:
    """Assemble Ψ, T and a decomposition; estimate and bound the decoupling error."""

    # Without block permutations

    def estimate_lhs_nonrandomized(
        self,
        psi: DensityOperator,
        channel: CpMap,
        decomp: DspDecomposition,
        samples: int,
        seed: int,
        system: str = "A",
    ) -> LhsEstimate:
        """Mean and standard error of ‖T(UΨU†) − T(Ψ_av)‖₁ over U ∼ H_×."""
        if samples < 2:
            raise ValueError("at least two samples are needed for a standard error")
        target = channel_service.apply_channel(channel, dsp_service.averaged_state(psi, decomp, system), system)

        def evaluate(i: int) -> float:
            rng = RngStream(seed, i).generator()
            u = sampling_service.dsp_unitary(decomp, rng)
            return trace_norm(channel_service.apply_channel(channel, u.conjugate(psi, system), system) - target)

        return _summarize(_sample_values(evaluate, samples))

    def bound_rhs_nonrandomized(
        self,
        psi: DensityOperator,
        channel: CpMap,
        decomp: DspDecomposition,
        system: str = "A",
        policy: ConditionerPolicy = ConditionerPolicy.SDP_OPTIMAL,
    ) -> RhsBound:
        """2^{−½H_min(A*|RE)_Λ}, plus the collision-entropy bound at the optimal ς."""
        bound = RhsBound()
        lam = dsp_service.build_lambda(psi, channel.choi, decomp, system, channel.input_name)
        conditioning = [name for name in lam.layout.names if name != "A*"]
        h_min = entropy_service.h_min_opt(lam, conditioning)
        bound.record("h_min_Astar|RE", h_min)
        bound.terms["bound_h_min"] = bound.total = decay(h_min.safe_lower)

        if h_min.conditioner is not None:
            conditioner = h_min.conditioner
            h2 = entropy_service.h2_fixed(lam, conditioner)
            bound.terms["h2_Astar|RE"] = h2.value
            bound.terms["bound_h2"] = decay(h2.value)
            bound.terms["lambda_norm_sq"] = weighted_two_norm(lam, conditioner) ** 2
            bound.terms["block_sum"] = dsp_service.weighted_block_sum(
                psi, channel.choi, decomp, conditioner, None, system, channel.input_name
            )

        if policy is ConditionerPolicy.MAXIMALLY_MIXED and lam.trace().real > settings.singular_tol:
            mixed = maximally_mixed(lam.layout.select(conditioning))
            fixed = entropy_service.h_min_fixed(lam, mixed).value
            bound.terms["h_min_fixed_mixed"] = fixed
            bound.terms["bound_h_min_fixed_mixed"] = decay(fixed)
        return bound

    # With block permutations

    def estimate_lhs_randomized(
        self,
        psi: DensityOperator,
        channel: CpMap,
        decomp: DspDecomposition,
        samples: int,
        seed: int,
        system: str = "A",
    ) -> LhsEstimate:
        """Mean and standard error of ‖T∘G_σ∘U(Ψ) − T∘G_σ(Ψ_av)‖₁ over σ ∼ P and U ∼ H_×."""
        if samples < 2:
            raise ValueError("at least two samples are needed for a standard error")
        decomp.require_randomizable()
        averaged = dsp_service.averaged_state(psi, decomp, system)

        def evaluate(i: int) -> float:
            rng = RngStream(seed, i).generator()
            sigma = sampling_service.random_permutation(decomp.J, rng)
            u = sampling_service.dsp_unitary(decomp, rng)
            g = sampling_service.permutation_unitary(sigma, decomp)
            scrambled = channel_service.apply_channel(channel, g.compose(u).conjugate(psi, system), system)
            target = channel_service.apply_channel(channel, g.conjugate(averaged, system), system)
            return trace_norm(scrambled - target)

        return _summarize(_sample_values(evaluate, samples))

    def bound_rhs_randomized(
        self,
        psi: DensityOperator,
        channel: CpMap,
        decomp: DspDecomposition,
        system: str = "A",
        policy: ConditionerPolicy = ConditionerPolicy.SDP_OPTIMAL,
        dequantization: bool = False,
    ) -> RhsBound:
        """√α(J)·2^{−½(H(A|R)_Ψ + H(A|EE_c)_τ̌)} + β(A_r)·2^{−½(H(A|R)_{C(Ψ)} + H(A|EE_c)_{C(τ̌)})}.

        The plain-τ terms (valid for block-respecting channels only) are reported alongside.
        """
        decomp.require_randomizable()
        bound = RhsBound()
        alpha = 0.0 if decomp.J == 1 else 1.0 / (decomp.J - 1)
        beta = 0.0 if decomp.r == 1 else 1.0
        bound.terms["alpha"], bound.terms["beta"] = alpha, beta

        reference = _reference(psi, system)
        dephased_psi = dsp_service.dephase_Ac(psi, decomp, system)
        checked = channel_service.checked(channel, decomp)
        outputs = list(channel.output_layout.names)
        checked_outputs = list(checked.output_layout.names)

        h_psi = bound.record("h_min_A|R", entropy_service.h_min_opt(psi, reference))
        h_cpsi = bound.record("h_min_A|R_dephased", entropy_service.h_min_opt(dephased_psi, reference))
        h_tau = bound.record("h_min_A|E", entropy_service.h_min_opt(channel.choi, outputs))
        h_ctau = bound.record(
            "h_min_A|E_dephased", entropy_service.h_min_opt(channel_service.dephased(channel, decomp).choi, outputs)
        )
        h_chk = bound.record("h_min_A|EEc", entropy_service.h_min_opt(checked.choi, checked_outputs))
        h_cchk = bound.record(
            "h_min_A|EEc_dephased",
            entropy_service.h_min_opt(channel_service.dephased(checked, decomp).choi, checked_outputs),
        )

        def combine(first: float, second: float, factor: float) -> float:
            return 0.0 if factor == 0.0 else factor * decay(first + second)

        bound.terms["term_I_plain"] = combine(h_psi, h_tau, math.sqrt(alpha))
        bound.terms["term_II_plain"] = combine(h_cpsi, h_ctau, beta)
        bound.terms["rhs_plain"] = bound.terms["term_I_plain"] + bound.terms["term_II_plain"]
        bound.terms["term_I"] = combine(h_psi, h_chk, math.sqrt(alpha))
        bound.terms["term_II"] = combine(h_cpsi, h_cchk, beta)
        bound.total = bound.terms["term_I"] + bound.terms["term_II"]

        if dequantization:
            complement = channel_service.complementary(channel)
            dephased_complement = channel_service.dephased(complement.channel, decomp)
            environment = list(complement.channel.output_layout.names)
            h_max = entropy_service.h_max_opt(dephased_complement.choi, environment)
            bound.terms["h_max_A|B_complement"] = h_max.value
            if h_max.certificate is not None:
                bound.sdp_gap = max(bound.sdp_gap or 0.0, h_max.certificate)
            bound.terms["corollary_bound"] = decay(h_psi - h_max.value) / math.sqrt(decomp.J - 1)

        if policy is ConditionerPolicy.MAXIMALLY_MIXED:
            terms = (("h_min_fixed_mixed_A|R", psi, reference), ("h_min_fixed_mixed_A|EEc", checked.choi, checked_outputs))
            for name, rho, conditioning in terms:
                if rho.trace().real > settings.singular_tol:
                    mixed = maximally_mixed(rho.layout.select(conditioning))
                    bound.terms[name] = entropy_service.h_min_fixed(rho, mixed).value
        return bound

    # Drivers

    def _margin(self, rhs_total: float, estimate: LhsEstimate) -> float:
        return rhs_total + settings.stderr_slack * estimate.stderr - estimate.mean

    def _report(
        self,
        config: ExperimentConfig,
        decomp: DspDecomposition,
        psi: DensityOperator,
        bound: RhsBound,
        estimate: Callable[[int], LhsEstimate],
    ) -> ExperimentReport:
        lhs = estimate(config.samples)
        margin = self._margin(bound.total, lhs)
        retried = False
        if margin < 0:
            larger = config.samples * settings.retry_factor
            logger.warning("%s: margin %.3e < 0 at N=%d; retrying at N=%d", config.name, margin, lhs.samples, larger)
            lhs = estimate(larger)
            margin = self._margin(bound.total, lhs)
            retried = True

        logger.info(
            "%s: mode=%s J=%d r=%d N=%d lhs=%.6g±%.2g rhs=%.6g margin=%.3e",
            config.name, config.mode.value, decomp.J, decomp.r, lhs.samples, lhs.mean, lhs.stderr, bound.total, margin,
        )
        reference_dim = psi.dim // decomp.dim
        return ExperimentReport(
            name=config.name,
            mode=config.mode,
            blocks=decomp.to_literal(),
            J=decomp.J,
            r=decomp.r,
            reference_dim=reference_dim,
            state=preset_service.describe(config.state),
            channel=preset_service.describe(config.channel),
            samples=lhs.samples,
            seed=config.seed,
            lhs_mean=lhs.mean,
            lhs_stderr=lhs.stderr,
            rhs_terms=bound.terms,
            rhs_total=bound.total,
            margin=margin,
            passed=margin >= 0,
            retried=retried,
            sdp_gap=bound.sdp_gap,
        )

    def _instance(self, config: ExperimentConfig) -> tuple[DspDecomposition, DensityOperator, CpMap]:
        decomp = config.decomp
        psi = preset_service.build_state(config.state, decomp, config.seed)
        channel = preset_service.build_channel(config.channel, decomp, config.seed)
        return decomp, psi, channel

    def run_nonrandomized(self, config: ExperimentConfig) -> ExperimentReport:
        decomp, psi, channel = self._instance(config)
        logger.info("%s: starting nonrandomized-pd on %s", config.name, decomp.to_literal())
        bound = self.bound_rhs_nonrandomized(psi, channel, decomp, policy=config.conditioner)
        return self._report(
            config, decomp, psi, bound,
            lambda n: self.estimate_lhs_nonrandomized(psi, channel, decomp, n, config.seed),
        )

    def run_randomized_pd(self, config: ExperimentConfig) -> ExperimentReport:
        """Randomized partial decoupling; decoupling-j1 and dequantization are its J = 1 and r = 1 cases."""
        decomp, psi, channel = self._instance(config)
        if not dsp_service.is_classically_coherent(psi, decomp):
            raise PreconditionError(f"{config.name}: randomized modes need a classically coherent state")
        logger.info("%s: starting %s on %s", config.name, config.mode.value, decomp.to_literal())
        bound = self.bound_rhs_randomized(
            psi, channel, decomp, policy=config.conditioner, dequantization=config.mode is Mode.DEQUANTIZATION
        )
        return self._report(
            config, decomp, psi, bound,
            lambda n: self.estimate_lhs_randomized(psi, channel, decomp, n, config.seed),
        )

    def run_experiment(self, config: ExperimentConfig) -> ExperimentReport:
        if config.mode is Mode.NONRANDOMIZED_PD:
            return self.run_nonrandomized(config)
        return self.run_randomized_pd(config)

    # Verification drivers

    def verify_lemma7(
        self,
        x: Operator,
        channel: CpMap,
        conditioner: DensityOperator,
        sigma: Optional[Sequence[int]],
        decomp: DspDecomposition,
        samples: int,
        seed: int,
        system: str = "A",
    ) -> Lemma7Report:
        """E_U‖T∘G_{σ⁻¹}∘U(X)‖²_{2,ς} by Monte Carlo against its exact block-sum value."""
        if samples < 2:
            raise ValueError("at least two samples are needed for a standard error")
        exact = sampling_service.exact_average_2norm(x, channel, conditioner, decomp, sigma, system)
        identity = sigma is None or tuple(sigma) == tuple(range(decomp.J))
        inverse = None
        if not identity:
            inverse = sampling_service.permutation_unitary(tuple(int(i) for i in np.argsort(sigma)), decomp)

        def evaluate(i: int) -> float:
            rng = RngStream(seed, i).generator()
            u = sampling_service.dsp_unitary(decomp, rng)
            moved = u if inverse is None else inverse.compose(u)
            y = channel_service.apply_channel(channel, moved.conjugate(x, system), system)
            return weighted_two_norm(y, conditioner) ** 2

        estimate = _summarize(_sample_values(evaluate, samples))
        margin = exact + settings.stderr_slack * estimate.stderr - estimate.mean
        # relative slack for X = 0, where both sides vanish
        margin += settings.equality_tol * max(1.0, exact)
        return Lemma7Report(
            J=decomp.J,
            samples=samples,
            seed=seed,
            mc_mean=estimate.mean,
            mc_stderr=estimate.stderr,
            exact=exact,
            margin=margin,
            passed=margin >= 0,
        )

    def twirl_patterns(self, decomp: DspDecomposition) -> list[tuple[int, int, int, int]]:
        """Index patterns (j, k, m, n) covering every twirl case the decomposition allows."""
        patterns = [(j, j, j, j) for j in range(decomp.J)]
        if decomp.J >= 2:
            patterns += [(0, 1, 0, 1), (1, 0, 1, 0), (0, 1, 1, 0), (0, 1, 0, 0)]
        if decomp.J >= 4:
            patterns.append((0, 1, 2, 3))
        return patterns

    def verify_twirl(self, decomp: DspDecomposition, samples: int, seed: int, rest_dim: int = 2) -> TwirlReport:
        """Frobenius distance between empirical twisted averages and the closed forms."""
        big_r = decomp.r
        layout = SubsystemLayout.of(("A_r", big_r), ("A_r'", big_r), ("M", rest_dim))
        threshold = 10.0 / math.sqrt(samples)
        report = TwirlReport(blocks=decomp.to_literal(), samples=samples, seed=seed)
        for index, (j, k, m, n) in enumerate(self.twirl_patterns(decomp)):
            rng = RngStream(seed, index, StreamDomain.INSTANCE).generator()
            g = rng.standard_normal((layout.dim, layout.dim)) + 1j * rng.standard_normal((layout.dim, layout.dim))
            operand = Operator(g / np.linalg.norm(g), layout)
            case = classify_twirl(j, k, m, n)
            exact = sampling_service.twisted_twirl_exact(operand, decomp, j, k, case)
            empirical = sampling_service.twisted_twirl_empirical(operand, decomp, (j, k, m, n), samples, seed)
            distance = two_norm(empirical - exact)
            result = TwirlCaseResult(
                case=case.value, j=j, k=k, m=m, n=n,
                distance=distance, threshold=threshold, passed=distance <= threshold,
            )
            logger.debug("twirl %s (%d,%d,%d,%d): distance %.3e", case.value, j, k, m, n, distance)
            report.cases.append(result)
        report.passed = all(case.passed for case in report.cases)
        return report

    # Random instances

    def _fits(self, config: ExperimentConfig) -> bool:
        decomp = config.decomp
        reference = config.state.reference_dim
        output_dim, kraus = config.channel.params["output_dim"], config.channel.params["k"]
        if config.mode.randomized:
            j = decomp.J
            dims = [
                decomp.dim * reference * (j if j > 1 else 1),
                decomp.dim * output_dim * j,
            ]
            if config.mode is Mode.DEQUANTIZATION:
                dims.append(decomp.dim * decomp.dim * kraus)
        else:
            dims = [decomp.star_dim * reference * output_dim]
        return max(dims) <= settings.max_sdp_dim

    def random_instance(self, spec: SweepSpec, index: int) -> ExperimentConfig:
        """Draw one ExperimentConfig within the sweep bounds and the SDP dimension cap."""
        rng = RngStream(spec.seed, index, StreamDomain.INSTANCE).generator()
        for _ in range(_INSTANCE_ATTEMPTS):
            if spec.mode is Mode.NONRANDOMIZED_PD:
                count = int(rng.integers(1, spec.max_blocks + 1))
                blocks = [
                    (int(rng.integers(1, spec.max_left + 1)), int(rng.integers(1, spec.max_right + 1)))
                    for _ in range(count)
                ]
                state = StateSpec(preset="random", reference_dim=int(rng.integers(1, spec.max_reference_dim + 1)))
            else:
                if spec.mode is Mode.DECOUPLING_J1:
                    count, right = 1, int(rng.integers(1, spec.max_right + 1))
                elif spec.mode is Mode.DEQUANTIZATION:
                    count, right = int(rng.integers(2, max(2, spec.max_blocks) + 1)), 1
                else:
                    count = int(rng.integers(2, max(2, spec.max_blocks) + 1))
                    right = int(rng.integers(1, spec.max_right + 1))
                blocks = [(1, right)] * count
                preset = "random" if count == 1 else "classically-coherent"
                state = StateSpec(preset=preset, reference_dim=int(rng.integers(1, spec.max_reference_dim + 1)))

            d = sum(left * right for left, right in blocks)
            output_dim = spec.output_dim or int(rng.integers(1, d + 1))
            kraus = int(rng.integers(1, 4))
            while output_dim * kraus < d:
                kraus += 1
            config = ExperimentConfig(
                name=f"{spec.name_prefix}-{spec.mode.value}-{index:03d}",
                decomposition="J=[" + ", ".join(f"({left},{right})" for left, right in blocks) + "]",
                mode=spec.mode,
                state=state,
                channel=ChannelSpec(preset="random-kraus", params={"k": kraus, "output_dim": output_dim}),
                samples=spec.samples,
                seed=int(rng.integers(0, 2**63)),
            )
            if self._fits(config):
                return config
        raise ConfigError(
            f"no {spec.mode.value} instance within max_sdp_dim = {settings.max_sdp_dim} "
            f"after {_INSTANCE_ATTEMPTS} draws; tighten the sweep bounds"
        )


experiment_service = ExperimentService()
