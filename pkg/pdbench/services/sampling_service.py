"""Random draws: Haar unitaries, H_× block unitaries, block permutations, random states.

Every draw takes a ``numpy.random.Generator``; reproducible streams come from
:class:`RngStream`, which derives a Philox generator from ``(seed, domain, stream)``.
"""
import logging
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Optional, Sequence

import numpy as np

from ..config import settings
from ..errors import DecompositionError, PreconditionError
from ..linalg import DensityOperator, HermitianOperator, Operator, SubsystemLayout, conjugate, permute, swap_operator
from .dsp_service import ClassicallyCoherentState, DspDecomposition, dsp_service

logger = logging.getLogger(__name__)

_U64 = 2 ** 64


class StreamDomain(IntEnum):
    """Separates the purposes random streams are drawn for."""

    SAMPLES = 0
    STATE = 1
    CHANNEL = 2
    INSTANCE = 3
    PROBE = 4
    TWIRL = 5


@dataclass(frozen=True)
class RngStream:
    """Counter-style stream: identical (seed, domain, stream) gives identical draws."""

    seed: int
    stream: int = 0
    domain: int = StreamDomain.SAMPLES

    def __post_init__(self):
        for field_name in ("seed", "stream"):
            value = getattr(self, field_name)
            if not 0 <= int(value) < _U64:
                raise ValueError(f"{field_name} must be an unsigned 64-bit integer, got {value}")

    def generator(self) -> np.random.Generator:
        sequence = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.domain), int(self.stream)))
        return np.random.Generator(np.random.Philox(sequence))


class UnitaryKind(str, Enum):
    HAAR_FULL = "haar-full"
    HAAR_DSP = "haar-dsp"
    PERMUTATION = "permutation"
    COMPOSED = "composed"


@dataclass(frozen=True, eq=False)
class StructuredUnitary:
    kind: UnitaryKind
    matrix: np.ndarray
    decomposition: Optional[DspDecomposition] = None

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=complex)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError(f"unitary must be square, got shape {matrix.shape}")
        error = np.linalg.norm(matrix.conj().T @ matrix - np.eye(matrix.shape[0]))
        if error > settings.unitarity_tol * max(1, matrix.shape[0]):
            raise ValueError(f"matrix is not unitary (‖U†U − I‖₂ = {error:.3e})")
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "kind", UnitaryKind(self.kind))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def compose(self, other: "StructuredUnitary") -> "StructuredUnitary":
        """``self ∘ other``."""
        kind = self.kind if self.kind == other.kind else UnitaryKind.COMPOSED
        return StructuredUnitary(kind, self.matrix @ other.matrix, self.decomposition or other.decomposition)

    def conjugate(self, x: Operator, system: str = "A") -> Operator:
        return conjugate(x, self.matrix, [system])


class TwirlCase(str, Enum):
    JK_DIRECT = "jk-direct"
    JK_CROSSED = "jk-crossed"
    JJ = "jj"
    VANISHING = "vanishing"


def classify_twirl(j: int, k: int, m: int, n: int) -> TwirlCase:
    """Case of E[(U_j ⊗ U_k) M (U_m ⊗ U_n)†] for independent block unitaries."""
    if j == k == m == n:
        return TwirlCase.JJ
    if j != k and (m, n) == (j, k):
        return TwirlCase.JK_DIRECT
    if j != k and (m, n) == (k, j):
        return TwirlCase.JK_CROSSED
    return TwirlCase.VANISHING


class SamplingService:
    """Haar sampling and the exact second moments of block-structured twirls."""

    def haar_matrix(self, d: int, rng: np.random.Generator) -> np.ndarray:
        if d < 1:
            raise ValueError(f"dimension must be positive, got {d}")
        z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / np.sqrt(2)
        q, r = np.linalg.qr(z)
        diagonal = np.diagonal(r)
        # phase fix: without it the QR factor is not Haar distributed
        q *= diagonal / np.abs(diagonal)
        return q

    def haar_unitary(self, d: int, rng: np.random.Generator) -> StructuredUnitary:
        return StructuredUnitary(UnitaryKind.HAAR_FULL, self.haar_matrix(d, rng))

    def dsp_unitary(self, decomp: DspDecomposition, rng: np.random.Generator) -> StructuredUnitary:
        """⊕_j I_j^{A_l} ⊗ U_j^{A_r} with independent Haar U_j (a uniform phase when r_j = 1)."""
        u = np.zeros((decomp.dim, decomp.dim), dtype=complex)
        for j, (left, right) in enumerate(decomp.blocks):
            sl = decomp.block_slice(j)
            u[sl, sl] = np.kron(np.eye(left), self.haar_matrix(right, rng))
        return StructuredUnitary(UnitaryKind.HAAR_DSP, u, decomp)

    def random_permutation(self, n: int, rng: np.random.Generator) -> tuple[int, ...]:
        return tuple(int(i) for i in rng.permutation(n))

    def permutation_unitary(self, sigma: Sequence[int], decomp: DspDecomposition) -> StructuredUnitary:
        """G_σ = Σ_j |σ(j)⟩⟨j|^{A_c} ⊗ I^{A_r}."""
        decomp.require_randomizable()
        sigma = tuple(int(s) for s in sigma)
        if sorted(sigma) != list(range(decomp.J)):
            raise DecompositionError(f"{sigma} is not a permutation of range({decomp.J})")
        r = decomp.r
        g = np.zeros((decomp.dim, decomp.dim))
        for j, target in enumerate(sigma):
            g[target * r:(target + 1) * r, j * r:(j + 1) * r] = np.eye(r)
        return StructuredUnitary(UnitaryKind.PERMUTATION, g, decomp)

    def _right_projector(self, decomp: DspDecomposition, j: int) -> np.ndarray:
        p = np.zeros((decomp.r, decomp.r))
        p[: decomp.rights[j], : decomp.rights[j]] = np.eye(decomp.rights[j])
        return p

    def twisted_twirl_exact(
        self,
        m: Operator,
        decomp: DspDecomposition,
        j: int,
        k: int,
        case: TwirlCase,
        first: str = "A_r",
        second: str = "A_r'",
    ) -> Operator:
        """Closed-form E[(U_j ⊗ U_k) M (U_m ⊗ U_n)†] on A_r⊗A_r'⊗(rest).

        A_r has dimension max_j r_j and U_j acts on its first r_j basis vectors.
        """
        case = TwirlCase(case)
        decomp.check_block(j)
        decomp.check_block(k)
        big_r = decomp.r
        if m.layout.dim_of(first) != big_r or m.layout.dim_of(second) != big_r:
            raise PreconditionError(f"{first} and {second} must both have dimension {big_r}")
        rest = [name for name in m.layout.names if name not in (first, second)]
        order = [first, second] + rest
        d_rest = m.layout.dim_of(*rest)
        ordered = permute(m, order).matrix
        t = ordered.reshape(big_r * big_r, d_rest, big_r * big_r, d_rest)

        def contract(op: np.ndarray) -> np.ndarray:
            return np.einsum("ab,bxay->xy", op, t)

        swap = swap_operator(big_r)
        rj, rk = decomp.rights[j], decomp.rights[k]
        i_jk = np.kron(self._right_projector(decomp, j), self._right_projector(decomp, k))
        if case in (TwirlCase.JK_DIRECT, TwirlCase.JK_CROSSED) and j == k:
            raise PreconditionError(f"{case.value} twirl needs distinct blocks, got j = k = {j}")
        if case is TwirlCase.JJ and j != k:
            raise PreconditionError(f"jj twirl needs j = k, got {j}, {k}")

        if case is TwirlCase.VANISHING:
            out = np.zeros_like(ordered)
        elif case is TwirlCase.JK_DIRECT:
            out = np.kron(i_jk, contract(i_jk)) / (rj * rk)
        elif case is TwirlCase.JK_CROSSED:
            i_kj = np.kron(self._right_projector(decomp, k), self._right_projector(decomp, j))
            out = np.kron(i_jk @ swap, contract(i_kj @ swap)) / (rj * rk)
        elif rj == 1:
            # U_j is a phase and cancels
            lift = np.kron(i_jk, np.eye(d_rest))
            out = lift @ ordered @ lift
        else:
            f_jj = i_jk @ swap
            m_i, m_f = contract(i_jk), contract(f_jj)
            out = (np.kron(rj * i_jk - f_jj, m_i) + np.kron(rj * f_jj - i_jk, m_f)) / (rj * (rj * rj - 1))
        result = Operator(out, m.layout.select(order))
        return permute(result, m.layout.names)

    def twisted_twirl_empirical(
        self,
        m: Operator,
        decomp: DspDecomposition,
        indices: tuple[int, int, int, int],
        samples: int,
        seed: int,
        first: str = "A_r",
        second: str = "A_r'",
    ) -> Operator:
        """Monte Carlo average of (U_j ⊗ U_k) M (U_m ⊗ U_n)† over independent block draws."""
        big_r = decomp.r
        rest = [name for name in m.layout.names if name not in (first, second)]
        order = [first, second] + rest
        d_rest = m.layout.dim_of(*rest)
        ordered = permute(m, order).matrix
        labels = sorted(set(indices))
        total = np.zeros_like(ordered)
        for i in range(samples):
            rng = RngStream(seed, i, StreamDomain.TWIRL).generator()
            draws = {}
            for label in labels:
                block = np.zeros((big_r, big_r), dtype=complex)
                rj = decomp.rights[label]
                block[:rj, :rj] = self.haar_matrix(rj, rng)
                draws[label] = block
            j, k, a, b = indices
            left = np.kron(np.kron(draws[j], draws[k]), np.eye(d_rest))
            right = np.kron(np.kron(draws[a], draws[b]), np.eye(d_rest))
            total += left @ ordered @ right.conj().T
        result = Operator(total / samples, m.layout.select(order))
        return permute(result, m.layout.names)

    def check_vanishing_diagonal(self, x: Operator, decomp: DspDecomposition, system: str = "A") -> float:
        """Largest entry of Tr_{A_r}[X_jj] over all blocks."""
        worst = 0.0
        for j in range(decomp.J):
            block = dsp_service.block_tensor(x, decomp, j, j, system)
            reduced = np.einsum("abxcby->axcy", block)
            worst = max(worst, float(np.max(np.abs(reduced))))
        return worst

    def exact_average_2norm(
        self,
        x: Operator,
        channel,
        conditioner: DensityOperator,
        decomp: DspDecomposition,
        permutation: Optional[Sequence[int]] = None,
        system: str = "A",
    ) -> float:
        """Σ_{jk} (d_A²/(r_j r_k)) ‖Tr_{A_l}[X_{σ(j)σ(k)} τ_{jk}]‖²_{2,ς} for X with vanishing Tr_{A_r}[X_jj]."""
        worst = self.check_vanishing_diagonal(x, decomp, system)
        if worst > settings.psd_tol:
            raise PreconditionError(f"Tr_(A_r)[X_jj] does not vanish (largest entry {worst:.3e})")
        return dsp_service.weighted_block_sum(
            x, channel.choi, decomp, conditioner, permutation, system, channel.input_name
        )

    def random_vector(self, d: int, rng: np.random.Generator) -> np.ndarray:
        v = rng.standard_normal(d) + 1j * rng.standard_normal(d)
        return v / np.linalg.norm(v)

    def random_density(
        self,
        layout: SubsystemLayout,
        rng: np.random.Generator,
        purifier_dim: Optional[int] = None,
    ) -> DensityOperator:
        """Marginal of a Haar-random pure state on layout ⊗ purifier (full rank by default)."""
        purifier_dim = layout.dim if purifier_dim is None else purifier_dim
        v = self.random_vector(layout.dim * purifier_dim, rng).reshape(layout.dim, purifier_dim)
        return DensityOperator(v @ v.conj().T, layout)

    def random_hermitian(self, layout: SubsystemLayout, rng: np.random.Generator) -> HermitianOperator:
        g = rng.standard_normal((layout.dim, layout.dim)) + 1j * rng.standard_normal((layout.dim, layout.dim))
        return HermitianOperator((g + g.conj().T) / 2, layout)

    def random_isometry(self, d_in: int, d_out: int, rng: np.random.Generator) -> np.ndarray:
        if d_out < d_in:
            raise ValueError(f"no isometry from dimension {d_in} into {d_out}")
        return self.haar_matrix(d_out, rng)[:, :d_in]

    def random_classically_coherent(
        self,
        decomp: DspDecomposition,
        reference_dim: int,
        rng: np.random.Generator,
    ) -> ClassicallyCoherentState:
        """Blocks ϱ_{kk'} cut from a random full-rank parent state on K⊗A_r⊗R_r."""
        decomp.require_randomizable()
        n, w = decomp.J, decomp.r * reference_dim
        parent = self.random_density(SubsystemLayout.of(("K", n), ("W", w)), rng).matrix
        blocks = parent.reshape(n, w, n, w).transpose(0, 2, 1, 3)
        return dsp_service.classically_coherent(blocks, decomp, reference_dim)


sampling_service = SamplingService()
