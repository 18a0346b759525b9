"""Direct-sum-product (DSP) decompositions H^A = ⊕_j H_j^{A_l} ⊗ H_j^{A_r}.

Basis convention: inside block j the ambient index of |a⟩^{A_l}|b⟩^{A_r} is
``offset_j + a * r_j + b``. All block-local maximally entangled states and transposes use this
standard basis.
"""
import logging
import math
import re
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..config import settings
from ..errors import BlockIndexError, DecompositionError, LayoutError, PreconditionError
from ..linalg import (
    DensityOperator,
    Operator,
    SubsystemLayout,
    apply_local,
    permute,
    psd_power,
    pure_state,
    relabel,
    rewrap,
    tensor,
)

logger = logging.getLogger(__name__)

_LITERAL = re.compile(r"^\s*J\s*=\s*\[(.*)\]\s*$", re.DOTALL)
_PAIR = re.compile(r"\(\s*(\d+)\s*,\s*(\d+)\s*\)")

STAR = "A*"
BAR = "Abar"


@dataclass(frozen=True)
class DspDecomposition:
    """Block shape {(l_j, r_j)} of a DSP-decomposed space."""

    blocks: tuple[tuple[int, int], ...]

    def __post_init__(self):
        blocks = tuple((int(left), int(right)) for left, right in self.blocks)
        if not blocks:
            raise DecompositionError("a decomposition needs at least one block")
        for left, right in blocks:
            if left < 1 or right < 1:
                raise DecompositionError(f"block dimensions must be positive, got ({left},{right})")
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def from_literal(cls, text: str) -> "DspDecomposition":
        """Parse ``J=[(l1,r1), (l2,r2), ...]``."""
        match = _LITERAL.match(text)
        if not match:
            raise DecompositionError(f"expected a literal like 'J=[(1,2),(2,1)]', got {text!r}")
        body = match.group(1)
        pairs = _PAIR.findall(body)
        leftover = _PAIR.sub("", body).replace(",", "").strip()
        if not pairs or leftover:
            raise DecompositionError(f"cannot parse block list {body!r}")
        return cls(tuple((int(left), int(right)) for left, right in pairs))

    @classmethod
    def uniform(cls, blocks: int, right: int) -> "DspDecomposition":
        return cls(tuple((1, right) for _ in range(blocks)))

    def to_literal(self) -> str:
        return "J=[" + ", ".join(f"({left},{right})" for left, right in self.blocks) + "]"

    @property
    def J(self) -> int:
        return len(self.blocks)

    @property
    def lefts(self) -> tuple[int, ...]:
        return tuple(left for left, _ in self.blocks)

    @property
    def rights(self) -> tuple[int, ...]:
        return tuple(right for _, right in self.blocks)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(left * right for left, right in self.blocks)

    @property
    def dim(self) -> int:
        return sum(self.sizes)

    @property
    def offsets(self) -> tuple[int, ...]:
        return tuple(int(o) for o in np.concatenate([[0], np.cumsum(self.sizes)[:-1]]))

    @property
    def star_offsets(self) -> tuple[int, ...]:
        squares = [right * right for right in self.rights]
        return tuple(int(o) for o in np.concatenate([[0], np.cumsum(squares)[:-1]]))

    @property
    def star_dim(self) -> int:
        return sum(right * right for right in self.rights)

    @property
    def is_randomizable(self) -> bool:
        """CC1: every l_j = 1 and every r_j equal."""
        return all(left == 1 for left in self.lefts) and len(set(self.rights)) == 1

    @property
    def r(self) -> int:
        """The common right dimension (largest one when blocks differ)."""
        return max(self.rights)

    def require_randomizable(self) -> None:
        if not self.is_randomizable:
            raise DecompositionError(
                f"{self.to_literal()} violates CC1 (all l_j = 1 and a common r_j are required)"
            )

    def check_block(self, j: int) -> None:
        if not 0 <= j < self.J:
            raise BlockIndexError(f"block index {j} outside range(0, {self.J})")

    def block_slice(self, j: int) -> slice:
        self.check_block(j)
        start = self.offsets[j]
        return slice(start, start + self.sizes[j])

    def index(self, j: int, a: int, b: int) -> int:
        left, right = self.blocks[j]
        if not (0 <= a < left and 0 <= b < right):
            raise BlockIndexError(f"({a},{b}) outside block {j} of shape ({left},{right})")
        return self.offsets[j] + a * right + b


@dataclass(frozen=True, eq=False)
class ClassicallyCoherentState:
    """Ψ^{AR} with A = A_c⊗A_r, R = R_c⊗R_r vanishing on mismatched labels k ≠ k'.

    ``blocks[k, k']`` is ϱ_{kk'} on A_r⊗R_r.
    """

    state: DensityOperator
    blocks: np.ndarray
    decomposition: DspDecomposition

    def __post_init__(self):
        if not dsp_service.is_classically_coherent(self.state, self.decomposition):
            raise PreconditionError("state is not classically coherent in A_c R_c")


class DspService:
    """Block bookkeeping and the DSP-specific constructions."""

    def projector(self, decomp: DspDecomposition, j: int) -> np.ndarray:
        p = np.zeros((decomp.dim, decomp.dim))
        sl = decomp.block_slice(j)
        p[sl, sl] = np.eye(decomp.sizes[j])
        return p

    def _check_system(self, x: Operator, decomp: DspDecomposition, system: str) -> None:
        if x.layout.dim_of(system) != decomp.dim:
            raise LayoutError(f"subsystem {system} of {x.layout} does not have dimension d_A = {decomp.dim}")

    def block_project(self, x: Operator, decomp: DspDecomposition, j: int, k: int, system: str = "A") -> Operator:
        """X_{jk} = Π_j X Π_k, embedded in the ambient space."""
        self._check_system(x, decomp, system)
        return apply_local(x, self.projector(decomp, j), [system], right=self.projector(decomp, k))

    def block_tensor(self, x: Operator, decomp: DspDecomposition, j: int, k: int, system: str = "A") -> np.ndarray:
        """The (j, k) block of ``x`` as an array indexed (a, b, rest, a', b', rest').

        ``rest`` runs over the remaining factors in layout order.
        """
        self._check_system(x, decomp, system)
        rest = [name for name in x.layout.names if name != system]
        d_rest = x.layout.dim_of(*rest)
        m = permute(x, [system] + rest).matrix.reshape(decomp.dim, d_rest, decomp.dim, d_rest)
        block = m[decomp.block_slice(j), :, decomp.block_slice(k), :]
        (lj, rj), (lk, rk) = decomp.blocks[j], decomp.blocks[k]
        return block.reshape(lj, rj, d_rest, lk, rk, d_rest)

    def maximally_entangled_vector(self, decomp: DspDecomposition) -> np.ndarray:
        d = decomp.dim
        v = np.zeros(d * d, dtype=complex)
        for j, (left, right) in enumerate(decomp.blocks):
            weight = math.sqrt(left * right / d) / math.sqrt(left) / math.sqrt(right)
            for a in range(left):
                for b in range(right):
                    x = decomp.index(j, a, b)
                    v[x * d + x] += weight
        return v

    def dsp_maximally_entangled(self, decomp: DspDecomposition, names: Sequence[str] = ("A", "A'")) -> DensityOperator:
        layout = SubsystemLayout.of((names[0], decomp.dim), (names[1], decomp.dim))
        return pure_state(self.maximally_entangled_vector(decomp), layout)

    def embedding_layout(self, decomp: DspDecomposition, names: Sequence[str] = ("A_c", "A_l", "A_r")) -> SubsystemLayout:
        return SubsystemLayout.of((names[0], decomp.J), (names[1], max(decomp.lefts)), (names[2], max(decomp.rights)))

    def embedding_isometry(self, decomp: DspDecomposition) -> np.ndarray:
        """W: A → A_c⊗A_l⊗A_r with W|j,a,b⟩ the standard embedding of each block."""
        big_l, big_r = max(decomp.lefts), max(decomp.rights)
        w = np.zeros((decomp.J * big_l * big_r, decomp.dim))
        for j, (left, right) in enumerate(decomp.blocks):
            for a in range(left):
                for b in range(right):
                    w[(j * big_l + a) * big_r + b, decomp.index(j, a, b)] = 1.0
        return w

    def embedding_projector(self, decomp: DspDecomposition) -> np.ndarray:
        w = self.embedding_isometry(decomp)
        return w @ w.T

    def embed(self, x: Operator, decomp: DspDecomposition, system: str = "A") -> Operator:
        self._check_system(x, decomp, system)
        layout = self.embedding_layout(decomp)
        return apply_local(x, self.embedding_isometry(decomp), [system], new_systems=layout.systems)

    def flatten_F(self, decomp: DspDecomposition) -> np.ndarray:
        """F = ⊕_j √(d_A l_j / r_j) ⟨Φ_j^l|(Π_j ⊗ Π_j): A⊗Ā → A* = ⊕_j A_r,j ⊗ Ā_r,j."""
        d = decomp.dim
        f = np.zeros((decomp.star_dim, d * d))
        for j, (left, right) in enumerate(decomp.blocks):
            scale = math.sqrt(d * left / right) / math.sqrt(left)
            base = decomp.star_offsets[j]
            for a in range(left):
                for b in range(right):
                    for bb in range(right):
                        row = base + b * right + bb
                        col = decomp.index(j, a, b) * d + decomp.index(j, a, bb)
                        f[row, col] = scale
        return f

    def build_lambda(
        self,
        psi: DensityOperator,
        choi: DensityOperator,
        decomp: DspDecomposition,
        system: str = "A",
        input_name: str = "A",
    ) -> Operator:
        """Λ(Ψ, T) = F(Ψ^{AR} ⊗ τ^{ĀE})F† on A*⊗R⊗E."""
        self._check_system(psi, decomp, system)
        self._check_system(choi, decomp, input_name)
        rest_r = [name for name in psi.layout.names if name != system]
        rest_e = [name for name in choi.layout.names if name != input_name]
        joint = tensor(relabel(psi, {system: "A"}), relabel(choi, {input_name: BAR}))
        joint = permute(joint, ["A", BAR] + rest_r + rest_e)
        return apply_local(joint, self.flatten_F(decomp), ["A", BAR], new_systems=[(STAR, decomp.star_dim)])

    def block_contraction(
        self,
        x: Operator,
        choi: Operator,
        decomp: DspDecomposition,
        j: int,
        k: int,
        source: Optional[tuple[int, int]] = None,
        system: str = "A",
        input_name: str = "A",
    ) -> np.ndarray:
        """Tr_{A_l}[X_{source}^{A_l^T A_r R} τ_{jk}^{A_l Ā_r E}] indexed (b, b̄, R, E, b', b̄', R', E')."""
        sj, sk = source if source is not None else (j, k)
        if (decomp.lefts[sj], decomp.lefts[sk]) != (decomp.lefts[j], decomp.lefts[k]):
            raise DecompositionError(f"blocks {(sj, sk)} and {(j, k)} have different left dimensions")
        p = self.block_tensor(x, decomp, sj, sk, system)
        t = self.block_tensor(choi, decomp, j, k, input_name)
        return np.einsum("abxcdy,afecgh->bfxedgyh", p, t, optimize=True)

    def weighted_block_sum(
        self,
        x: Operator,
        choi: Operator,
        decomp: DspDecomposition,
        conditioner: DensityOperator,
        permutation: Optional[Sequence[int]] = None,
        system: str = "A",
        input_name: str = "A",
    ) -> float:
        """Σ_{jk} (d_A²/(r_j r_k)) ‖Tr_{A_l}[X_{σ(j)σ(k)} τ_{jk}]‖²_{2,ς}, ς on R⊗E."""
        sigma = tuple(range(decomp.J)) if permutation is None else tuple(permutation)
        rest_r = [name for name in x.layout.names if name != system]
        rest_e = [name for name in choi.layout.names if name != input_name]
        if sorted(conditioner.layout.names) != sorted(rest_r + rest_e):
            raise LayoutError(f"conditioner {conditioner.layout} must act on {rest_r + rest_e}")
        weight = psd_power(permute(conditioner, rest_r + rest_e), -0.25)
        d = decomp.dim
        total = 0.0
        for j in range(decomp.J):
            for k in range(decomp.J):
                m = self.block_contraction(x, choi, decomp, j, k, (sigma[j], sigma[k]), system, input_name)
                b, bb, dr, de = m.shape[:4]
                c, cc = m.shape[4:6]
                m = m.reshape(b * bb, dr * de, c * cc, dr * de)
                weighted = np.einsum("pq,aqbs,st->apbt", weight, m, weight, optimize=True)
                total += d * d / (decomp.rights[j] * decomp.rights[k]) * float(np.sum(np.abs(weighted) ** 2))
        return total

    def averaged_state(self, psi: Operator, decomp: DspDecomposition, system: str = "A") -> Operator:
        """Ψ_av = ⊕_j Ψ_jj^{A_l R} ⊗ π_j^{A_r}."""
        self._check_system(psi, decomp, system)
        order = [system] + [name for name in psi.layout.names if name != system]
        d_rest = psi.layout.dim_of(*order[1:])
        m = permute(psi, order).matrix.reshape(decomp.dim, d_rest, decomp.dim, d_rest)
        out = np.zeros_like(m)
        for j, (left, right) in enumerate(decomp.blocks):
            sl = decomp.block_slice(j)
            block = m[sl, :, sl, :].reshape(left, right, d_rest, left, right, d_rest)
            reduced = np.einsum("abxcby->axcy", block)
            averaged = np.einsum("axcy,bd->abxcdy", reduced, np.eye(right) / right)
            out[sl, :, sl, :] = averaged.reshape(left * right, d_rest, left * right, d_rest)
        result = rewrap(out.reshape(psi.dim, psi.dim), psi.layout.select(order), psi)
        return permute(result, psi.layout.names)

    def dephase_Ac(self, x: Operator, decomp: DspDecomposition, system: str = "A") -> Operator:
        """C(X) = Σ_j Π_j X Π_j for decompositions satisfying CC1."""
        decomp.require_randomizable()
        self._check_system(x, decomp, system)
        order = [system] + [name for name in x.layout.names if name != system]
        d_rest = x.layout.dim_of(*order[1:])
        m = permute(x, order).matrix.reshape(decomp.dim, d_rest, decomp.dim, d_rest)
        out = np.zeros_like(m)
        for j in range(decomp.J):
            sl = decomp.block_slice(j)
            out[sl, :, sl, :] = m[sl, :, sl, :]
        result = rewrap(out.reshape(x.dim, x.dim), x.layout.select(order), x)
        return permute(result, x.layout.names)

    def classically_coherent(
        self,
        blocks: np.ndarray,
        decomp: DspDecomposition,
        reference_dim: int,
    ) -> ClassicallyCoherentState:
        """Σ_{kk'} |kk⟩⟨k'k'|^{A_c R_c} ⊗ ϱ_{kk'}^{A_r R_r} on the layout (A, R_c, R_r)."""
        decomp.require_randomizable()
        n, r, m = decomp.J, decomp.r, reference_dim
        blocks = np.asarray(blocks, dtype=complex)
        if blocks.shape != (n, n, r * m, r * m):
            raise LayoutError(f"expected blocks of shape {(n, n, r * m, r * m)}, got {blocks.shape}")
        full = np.zeros((n, n, r, m, n, n, r, m), dtype=complex)
        for k in range(n):
            for kp in range(n):
                full[k, k, :, :, kp, kp, :, :] = blocks[k, kp].reshape(r, m, r, m)
        # (A_c, R_c, A_r, R_r) -> (A_c, A_r, R_c, R_r)
        full = full.transpose(0, 2, 1, 3, 4, 6, 5, 7)
        dim = n * r * n * m
        layout = SubsystemLayout.of(("A", n * r), ("R_c", n), ("R_r", m))
        state = DensityOperator(full.reshape(dim, dim), layout)
        return ClassicallyCoherentState(state=state, blocks=blocks, decomposition=decomp)

    def is_classically_coherent(
        self,
        state: Operator,
        decomp: DspDecomposition,
        system: str = "A",
        label: str = "R_c",
    ) -> bool:
        if decomp.J == 1:
            return True
        decomp.require_randomizable()
        if label not in state.layout or state.layout.dim_of(label) != decomp.J:
            return False
        rest = [name for name in state.layout.names if name not in (system, label)]
        d_rest = state.layout.dim_of(*rest)
        n, r = decomp.J, decomp.r
        t = permute(state, [system, label] + rest).matrix.reshape(n, r, n, d_rest, n, r, n, d_rest)
        worst = 0.0
        for k in range(n):
            for kp in range(n):
                if k == kp:
                    continue
                worst = max(worst, float(np.max(np.abs(t[k, :, kp]))), float(np.max(np.abs(t[:, :, :, :, k, :, kp]))))
        return worst <= settings.psd_tol


dsp_service = DspService()
