"""One-shot conditional entropies in bits.

``h_min_opt`` solves min{Tr σ : I^A ⊗ σ ≥ ρ, σ ≥ 0} and its dual
max{Tr[ρX] : Tr_A X ≤ I^B, X ≥ 0} with cvxpy, repairs both solver outputs into exactly feasible
points and reports the certified interval between them.
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import cvxpy as cvx
import numpy as np
from scipy import linalg as sla

from ..config import settings
from ..errors import EntropyConvergenceError, LayoutError, PreconditionError
from ..linalg import (
    DensityOperator,
    Operator,
    SubsystemLayout,
    apply_local,
    hermitian_part,
    lambda_max,
    partial_trace,
    permute,
    psd_power,
    pure_state,
    weighted_two_norm,
)

logger = logging.getLogger(__name__)

PURIFIER = "_purifier"
# weight of the maximally mixed admixture that keeps an optimal conditioner invertible
CONDITIONER_MIXING = 1e-9


@dataclass(frozen=True, eq=False)
class EntropyResult:
    """An entropy value with its conditioner and, for SDP results, the certified interval."""

    value: float
    conditioner: Optional[DensityOperator] = None
    lower: Optional[float] = None
    upper: Optional[float] = None
    certificate: Optional[float] = None

    @property
    def safe_lower(self) -> float:
        return self.value if self.lower is None else self.lower

    def shifted(self, offset: float) -> "EntropyResult":
        def move(x: Optional[float]) -> Optional[float]:
            return None if x is None else x + offset

        return replace(self, value=self.value + offset, lower=move(self.lower), upper=move(self.upper))


def _log2(x: float) -> float:
    return math.log2(x) if x > 0 else -math.inf


def _clip_psd(m: np.ndarray) -> np.ndarray:
    w, v = sla.eigh(hermitian_part(m))
    return (v * np.clip(w, 0.0, None)) @ v.conj().T


def _check_conditioner(rho: Operator, conditioner: DensityOperator) -> None:
    for name, dim in conditioner.layout:
        if name not in rho.layout or rho.layout.dim_of(name) != dim:
            raise LayoutError(f"conditioner factor {name}({dim}) is not a factor of {rho.layout}")
    if len(conditioner.layout) == len(rho.layout):
        raise LayoutError("the conditioned system A is empty")


class EntropyService:
    """Closed forms for a fixed conditioner and the SDP-optimized min-entropy."""

    def h_min_fixed(self, rho: Operator, conditioner: DensityOperator) -> EntropyResult:
        """−log λ_max((I ⊗ ς)^{−1/2} ρ (I ⊗ ς)^{−1/2})."""
        _check_conditioner(rho, conditioner)
        scaled = apply_local(rho, psd_power(conditioner, -0.5), conditioner.layout.names)
        return EntropyResult(value=-_log2(lambda_max(scaled)), conditioner=conditioner)

    def h2_fixed(self, rho: Operator, conditioner: DensityOperator) -> EntropyResult:
        """−log ‖ρ‖²_{2,ς}."""
        _check_conditioner(rho, conditioner)
        norm = weighted_two_norm(rho, conditioner)
        return EntropyResult(value=-2.0 * _log2(norm), conditioner=conditioner)

    def h_max_fixed(self, rho: Operator, conditioner: DensityOperator) -> EntropyResult:
        """log ‖√ρ √(I ⊗ ς)‖₁² = 2 log Tr√(√(I⊗ς) ρ √(I⊗ς))."""
        _check_conditioner(rho, conditioner)
        inner = apply_local(rho, psd_power(conditioner, 0.5), conditioner.layout.names)
        w = sla.eigvalsh(hermitian_part(inner.matrix))
        # null space of a rank-deficient ρ contributes nothing
        w = np.where(w > settings.rank_tol * max(float(w.max()), 0.0), w, 0.0)
        return EntropyResult(value=2.0 * _log2(float(np.sum(np.sqrt(w)))), conditioner=conditioner)

    def h_min_opt(self, rho: Operator, conditioning: Sequence[str], tol: Optional[float] = None) -> EntropyResult:
        """H_min(A|B)_ρ with B = ``conditioning`` and A every other factor."""
        tol = settings.sdp_gap_tol if tol is None else tol
        conditioning = list(conditioning)
        for name in conditioning:
            rho.layout.index(name)
        systems_a = [name for name in rho.layout.names if name not in conditioning]
        if not systems_a:
            raise LayoutError("the conditioned system A is empty")
        d_a, d_b = rho.layout.dim_of(*systems_a), rho.layout.dim_of(*conditioning)
        if d_a * d_b > settings.max_sdp_dim:
            raise PreconditionError(
                f"min-entropy SDP on {d_a}x{d_b} exceeds max_sdp_dim = {settings.max_sdp_dim}"
            )

        matrix = hermitian_part(permute(rho, systems_a + conditioning).matrix)
        trace = float(np.real(np.trace(matrix)))
        if trace <= settings.singular_tol:
            return EntropyResult(value=math.inf, lower=math.inf, upper=math.inf, certificate=0.0)
        normalized = matrix / trace
        offset = -math.log2(trace)

        if d_b == 1:
            value = -math.log2(lambda_max(normalized))
            return EntropyResult(value=value, lower=value, upper=value, certificate=0.0).shifted(offset)

        primal, sigma = self._solve_primal(normalized, d_a, d_b)
        dual = self._solve_dual(normalized, d_a, d_b)
        lower, upper = -_log2(primal), -_log2(dual)
        gap = upper - lower
        logger.debug("min-entropy SDP %dx%d: interval [%.12g, %.12g], gap %.3e", d_a, d_b, lower, upper, gap)
        if not gap <= tol:
            raise EntropyConvergenceError(f"min-entropy duality gap {gap:.3e} exceeds {tol:.1e}", gap=gap)

        mixed = (1 - CONDITIONER_MIXING) * sigma / np.real(np.trace(sigma)) + CONDITIONER_MIXING * np.eye(d_b) / d_b
        conditioner = DensityOperator(mixed, rho.layout.select(conditioning))
        result = EntropyResult(
            value=(lower + upper) / 2,
            conditioner=conditioner,
            lower=lower,
            upper=upper,
            certificate=max(gap, 0.0),
        )
        return result.shifted(offset)

    def _solver_options(self) -> dict:
        if settings.sdp_solver.upper() == "CLARABEL":
            return {
                "tol_gap_abs": settings.sdp_solver_tol,
                "tol_gap_rel": settings.sdp_solver_tol,
                "tol_feas": settings.sdp_solver_tol,
                "max_iter": settings.sdp_max_iter,
            }
        return {}

    def _solve(self, problem: cvx.Problem, label: str) -> None:
        try:
            problem.solve(solver=settings.sdp_solver, **self._solver_options())
        except cvx.error.SolverError as exc:
            raise EntropyConvergenceError(f"{label} SDP failed: {exc}") from exc
        if problem.status not in (cvx.OPTIMAL, cvx.OPTIMAL_INACCURATE):
            raise EntropyConvergenceError(f"{label} SDP ended with status {problem.status}")
        if problem.status == cvx.OPTIMAL_INACCURATE:
            logger.warning("%s SDP solved inaccurately; relying on the repaired certificate", label)

    def _solve_primal(self, rho: np.ndarray, d_a: int, d_b: int) -> tuple[float, np.ndarray]:
        n = d_a * d_b
        sigma = cvx.Variable((d_b, d_b), hermitian=True)
        slack = cvx.Variable((n, n), hermitian=True)
        lift = 0
        for a in range(d_a):
            embed = np.kron(np.eye(d_a)[:, [a]], np.eye(d_b))
            lift = lift + embed @ sigma @ embed.T

        obj = cvx.Minimize(cvx.real(cvx.trace(sigma)))
        constraints = [slack == lift - rho, slack >> 0, sigma >> 0]
        self._solve(cvx.Problem(obj, constraints), "primal")

        # exact feasibility: I ⊗ σ ≥ ρ after the smallest uniform shift
        s = _clip_psd(sigma.value)
        shift = max(0.0, lambda_max(rho - np.kron(np.eye(d_a), s)))
        s = s + shift * np.eye(d_b)
        return float(np.real(np.trace(s))), s

    def _solve_dual(self, rho: np.ndarray, d_a: int, d_b: int) -> float:
        n = d_a * d_b
        x = cvx.Variable((n, n), hermitian=True)
        y = cvx.Variable((d_b, d_b), hermitian=True)

        obj = cvx.Maximize(cvx.real(cvx.trace(rho @ x)))
        constraints = [
            x >> 0,
            y == np.eye(d_b) - cvx.partial_trace(x, (d_a, d_b), axis=0),
            y >> 0,
        ]
        self._solve(cvx.Problem(obj, constraints), "dual")

        # exact feasibility: Tr_A X ≤ I
        m = _clip_psd(x.value)
        scale = lambda_max(np.einsum("ajak->jk", m.reshape(d_a, d_b, d_a, d_b)))
        if scale <= 0:
            return 0.0
        return float(np.real(np.trace(rho @ m))) / scale

    def purify(self, rho: Operator, name: str = PURIFIER) -> DensityOperator:
        """|ψ⟩⟨ψ| on (layout of ρ)⊗C with Tr_C equal to ρ."""
        w, v = sla.eigh(hermitian_part(rho.matrix))
        support = w > settings.rank_tol
        if not np.any(support):
            raise PreconditionError("cannot purify the zero operator")
        if w[0] < -settings.psd_tol:
            raise PreconditionError(f"cannot purify an operator with eigenvalue {w[0]:.3e}")
        w, v = w[support], v[:, support]
        vector = (v * np.sqrt(w)).reshape(-1)
        layout = rho.layout.concat(SubsystemLayout.of((name, int(w.size))))
        return pure_state(vector, layout)

    def h_max_opt(self, rho: Operator, conditioning: Sequence[str], tol: Optional[float] = None) -> EntropyResult:
        """H_max(A|B)_ρ = −H_min(A|C)_ψ for a purification ψ^{ABC}."""
        for name in conditioning:
            rho.layout.index(name)
        if float(np.real(np.trace(rho.matrix))) <= settings.singular_tol:
            return EntropyResult(value=-math.inf, lower=-math.inf, upper=-math.inf, certificate=0.0)
        psi = self.purify(rho)
        systems_a = [name for name in rho.layout.names if name not in set(conditioning)]
        reduced = partial_trace(psi, systems_a + [PURIFIER])
        dual = self.h_min_opt(reduced, [PURIFIER], tol)
        return EntropyResult(
            value=-dual.value,
            lower=None if dual.upper is None else -dual.upper,
            upper=None if dual.lower is None else -dual.lower,
            certificate=dual.certificate,
        )


entropy_service = EntropyService()
