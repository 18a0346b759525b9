"""CP maps stored as Choi operators τ^{AE} = (id ⊗ T)(Φ^{AA'}) with normalized Φ."""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import linalg as sla

from ..config import settings
from ..errors import (
    EnvironmentTooSmallError,
    HermiticityError,
    LayoutError,
    NotCompletelyPositiveError,
    PositivityError,
    PreconditionError,
)
from ..linalg import (
    DensityOperator,
    Operator,
    SubsystemLayout,
    lambda_max,
    partial_trace,
    permute,
    psd_power,
    pure_state,
    relabel,
    rewrap,
    trace_norm,
)
from .dsp_service import DspDecomposition, dsp_service
from .sampling_service import RngStream, StreamDomain, sampling_service

logger = logging.getLogger(__name__)

MatrixAction = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class CpMap:
    """Channel A → E given by its Choi operator on (input, outputs...)."""

    choi: DensityOperator

    def __post_init__(self):
        choi = self.choi
        if not isinstance(choi, DensityOperator):
            try:
                choi = DensityOperator(choi.matrix, choi.layout)
            except (PositivityError, HermiticityError) as exc:
                raise NotCompletelyPositiveError(f"Choi operator is not positive: {exc}") from exc
            object.__setattr__(self, "choi", choi)
        if len(choi.layout) < 2:
            raise LayoutError(f"Choi layout {choi.layout} needs an input and at least one output factor")

    @property
    def input_name(self) -> str:
        return self.choi.layout.names[0]

    @property
    def d_in(self) -> int:
        return self.choi.layout.dims[0]

    @property
    def output_layout(self) -> SubsystemLayout:
        return self.choi.layout.without([self.input_name])

    @property
    def d_out(self) -> int:
        return self.output_layout.dim

    def _input_marginal(self) -> np.ndarray:
        return partial_trace(self.choi, [self.input_name]).matrix

    @property
    def trace_preserving(self) -> bool:
        deviation = self._input_marginal() - np.eye(self.d_in) / self.d_in
        return bool(np.max(np.abs(deviation)) <= settings.equality_tol)

    @property
    def trace_nonincreasing(self) -> bool:
        return lambda_max(self._input_marginal() - np.eye(self.d_in) / self.d_in) <= settings.psd_tol

    @property
    def choi_trace_le_one(self) -> bool:
        return self.choi.trace_value <= 1.0 + settings.psd_tol

    def flags(self) -> dict[str, bool]:
        return {
            "trace_preserving": self.trace_preserving,
            "trace_nonincreasing": self.trace_nonincreasing,
            "choi_trace_le_one": self.choi_trace_le_one,
        }


@dataclass(frozen=True, eq=False)
class ComplementaryChannel:
    """Complement A → B of a channel together with the dilation it came from."""

    channel: CpMap
    stinespring: np.ndarray
    purified_choi: np.ndarray
    purified_layout: SubsystemLayout

    def purified_state(self) -> DensityOperator:
        """|τ⟩⟨τ| on A⊗E⊗B; its A⊗E and A⊗B marginals are the two Choi operators."""
        return pure_state(self.purified_choi, self.purified_layout)


class ChannelService:
    """Construction and evaluation of CP maps."""

    def choi_of(
        self,
        action: MatrixAction,
        d_in: int,
        d_out: Union[int, SubsystemLayout],
        input_name: str = "A",
        output_name: str = "E",
    ) -> CpMap:
        """τ = (1/d) Σ_{xy} |x⟩⟨y| ⊗ T(|x⟩⟨y|)."""
        outputs = d_out if isinstance(d_out, SubsystemLayout) else SubsystemLayout.of((output_name, d_out))
        do = outputs.dim
        choi = np.zeros((d_in * do, d_in * do), dtype=complex)
        for x in range(d_in):
            for y in range(d_in):
                unit = np.zeros((d_in, d_in), dtype=complex)
                unit[x, y] = 1.0
                image = np.asarray(action(unit), dtype=complex)
                if image.shape != (do, do):
                    raise LayoutError(f"map returned shape {image.shape}, expected {(do, do)}")
                choi[x * do:(x + 1) * do, y * do:(y + 1) * do] = image / d_in
        layout = SubsystemLayout.of((input_name, d_in)).concat(outputs)
        try:
            return CpMap(DensityOperator(choi, layout))
        except (PositivityError, HermiticityError) as exc:
            raise NotCompletelyPositiveError(f"map is not completely positive: {exc}") from exc

    def from_kraus(self, kraus: Sequence[np.ndarray], input_name: str = "A", output_name: str = "E") -> CpMap:
        kraus = [np.asarray(k, dtype=complex) for k in kraus]
        d_out, d_in = kraus[0].shape
        return self.choi_of(
            lambda x: sum(k @ x @ k.conj().T for k in kraus), d_in, d_out, input_name, output_name
        )

    def identity(self, d: int, input_name: str = "A", output_name: str = "E") -> CpMap:
        return self.from_kraus([np.eye(d)], input_name, output_name)

    def depolarizing(self, d: int, p: float, input_name: str = "A", output_name: str = "E") -> CpMap:
        """ρ ↦ (1 − p)ρ + p Tr[ρ] π."""
        if not 0.0 <= p <= 1.0 + 1.0 / (d * d - 1 if d > 1 else 1):
            raise ValueError(f"depolarizing parameter {p} outside the CP range")
        return self.choi_of(lambda x: (1 - p) * x + p * np.trace(x) * np.eye(d) / d, d, d, input_name, output_name)

    def completely_depolarizing(self, d_in: int, d_out: int, input_name: str = "A", output_name: str = "E") -> CpMap:
        return self.choi_of(lambda x: np.trace(x) * np.eye(d_out) / d_out, d_in, d_out, input_name, output_name)

    def dephasing(self, d: int, input_name: str = "A", output_name: str = "E") -> CpMap:
        return self.choi_of(lambda x: np.diag(np.diag(x)), d, d, input_name, output_name)

    def partial_trace_channel(
        self,
        dims: Sequence[int],
        keep: Sequence[int],
        input_name: str = "A",
        output_name: str = "E",
    ) -> CpMap:
        """Trace out the factors of A = ⊗_i C^{dims[i]} whose positions are not in ``keep``."""
        dims = [int(d) for d in dims]
        keep = sorted(set(int(i) for i in keep))
        if any(not 0 <= i < len(dims) for i in keep):
            raise LayoutError(f"keep positions {keep} outside the {len(dims)} factors")
        layout = SubsystemLayout(tuple((f"q{i}", d) for i, d in enumerate(dims)))
        kept = [f"q{i}" for i in keep]
        d_out = math.prod(dims[i] for i in keep)

        def action(x: np.ndarray) -> np.ndarray:
            return partial_trace(Operator(x, layout), kept).matrix

        return self.choi_of(action, layout.dim, d_out, input_name, output_name)

    def random_kraus(
        self,
        d_in: int,
        d_out: int,
        kraus_rank: int,
        rng: np.random.Generator,
        input_name: str = "A",
        output_name: str = "E",
    ) -> CpMap:
        """Trace-preserving map whose Kraus operators are slices of a Haar isometry."""
        v = sampling_service.random_isometry(d_in, d_out * kraus_rank, rng).reshape(d_out, kraus_rank, d_in)
        return self.from_kraus([v[:, i, :] for i in range(kraus_rank)], input_name, output_name)

    def apply_channel(self, channel: CpMap, rho: Operator, system: Optional[str] = None) -> Operator:
        """d_A Tr_A[(ρ^{T_A} ⊗ I^E)(τ^{AE} ⊗ I^C)], returned on E⊗C."""
        system = system or channel.input_name
        if rho.layout.dim_of(system) != channel.d_in:
            raise LayoutError(f"channel input {channel.d_in} does not match {system} in {rho.layout}")
        rest = [name for name in rho.layout.names if name != system]
        clash = set(rest) & set(channel.output_layout.names)
        if clash:
            raise LayoutError(f"channel outputs {sorted(clash)} collide with {rho.layout}")
        d, dc, do = channel.d_in, rho.layout.dim_of(*rest), channel.d_out
        r = permute(rho, [system] + rest).matrix.reshape(d, dc, d, dc)
        t = channel.choi.matrix.reshape(d, do, d, do)
        out = d * np.einsum("xcyd,xeyf->ecfd", r, t, optimize=True)
        layout = channel.output_layout.concat(rho.layout.select(rest))
        return rewrap(out.reshape(do * dc, do * dc), layout, rho, channel.choi)

    def complementary(
        self,
        channel: CpMap,
        environment_name: str = "B",
        max_environment_dim: Optional[int] = None,
    ) -> ComplementaryChannel:
        """Complement via the minimal Stinespring dilation read off the Choi eigendecomposition."""
        if not channel.trace_nonincreasing:
            raise PreconditionError("complementary channel needs a trace-nonincreasing map")
        w, v = sla.eigh(channel.choi.matrix)
        support = w > settings.rank_tol
        w, v = w[support], v[:, support]
        rank = max(int(w.size), 1)
        if w.size == 0:
            w, v = np.zeros(1), np.zeros((channel.choi.dim, 1), dtype=complex)
        if max_environment_dim is not None and rank > max_environment_dim:
            raise EnvironmentTooSmallError(
                f"Choi rank {rank} exceeds the environment budget {max_environment_dim}; enlarge B"
            )
        d, do = channel.d_in, channel.d_out
        amplitudes = (v * np.sqrt(w)).reshape(d, do, rank)
        stinespring = math.sqrt(d) * amplitudes.reshape(d, do * rank).T
        complement_choi = np.einsum("xeb,yec->xbyc", amplitudes, amplitudes.conj()).reshape(d * rank, d * rank)
        layout = SubsystemLayout.of((channel.input_name, d), (environment_name, rank))
        purified_layout = channel.choi.layout.concat(SubsystemLayout.of((environment_name, rank)))
        logger.debug("complementary channel with environment dimension %d", rank)
        return ComplementaryChannel(
            channel=CpMap(DensityOperator(complement_choi, layout)),
            stinespring=stinespring,
            purified_choi=amplitudes.reshape(-1),
            purified_layout=purified_layout,
        )

    def dephased(self, channel: CpMap, decomp: DspDecomposition) -> CpMap:
        """T∘C, whose Choi operator is C applied to the input side of τ."""
        return CpMap(dsp_service.dephase_Ac(channel.choi, decomp, channel.input_name))

    def checked(self, channel: CpMap, decomp: DspDecomposition, label: str = "E_c") -> CpMap:
        """T∘Y with Y = Σ_j |jj⟩^{A_c E_c}⟨j|^{A_c}; Choi Σ_{jk} Π_j τ Π_k ⊗ |j⟩⟨k|^{E_c}."""
        name = channel.input_name
        d, do, n = channel.d_in, channel.d_out, decomp.J
        if d != decomp.dim:
            raise LayoutError(f"channel input {d} does not match d_A = {decomp.dim}")
        m = channel.choi.matrix.reshape(d, do, d, do)
        out = np.zeros((d, do, n, d, do, n), dtype=complex)
        for j in range(n):
            for k in range(n):
                sj, sk = decomp.block_slice(j), decomp.block_slice(k)
                out[sj, :, j, sk, :, k] = m[sj, :, sk, :]
        dim = d * do * n
        layout = channel.choi.layout.concat(SubsystemLayout.of((label, n)))
        return CpMap(DensityOperator(out.reshape(dim, dim), layout))

    def _probe_input(self, decomp: DspDecomposition, trial: int, seed: int) -> np.ndarray:
        """A-marginal ⊕_j q_j ϖ_j ⊗ π_j; trial 0 is the maximally mixed state."""
        if trial == 0:
            return np.eye(decomp.dim) / decomp.dim
        rng = RngStream(seed, trial, StreamDomain.PROBE).generator()
        q = rng.dirichlet(np.ones(decomp.J))
        xi = np.zeros((decomp.dim, decomp.dim), dtype=complex)
        for j, (left, right) in enumerate(decomp.blocks):
            varpi = sampling_service.random_density(SubsystemLayout.of(("A_l", left)), rng).matrix
            sl = decomp.block_slice(j)
            xi[sl, sl] = q[j] * np.kron(varpi, np.eye(right) / right)
        return xi

    def dsp_norm_lower_bound(
        self,
        first: CpMap,
        second: CpMap,
        decomp: DspDecomposition,
        trials: int,
        seed: int = 0,
    ) -> float:
        """max over sampled admissible ξ^{AC} of ‖(T₁ − T₂)(ξ)‖₁, with C = A'."""
        if trials < 1:
            raise ValueError("at least one trial is needed")
        for channel in (first, second):
            if channel.d_in != decomp.dim:
                raise LayoutError(f"channel input {channel.d_in} does not match d_A = {decomp.dim}")
        layout = SubsystemLayout.of((first.input_name, decomp.dim), ("C", decomp.dim))

        def evaluate(trial: int) -> float:
            root = psd_power(self._probe_input(decomp, trial, seed), 0.5)
            xi = pure_state(root.reshape(-1), layout)
            out_first = self.apply_channel(first, xi)
            if second.input_name != first.input_name:
                xi = relabel(xi, {first.input_name: second.input_name})
            out_second = self.apply_channel(second, xi)
            return trace_norm(out_first - permute(out_second, out_first.layout.names))

        with ThreadPoolExecutor(max_workers=max(1, settings.workers)) as pool:
            values = list(pool.map(evaluate, range(trials)))
        return float(max(values))


channel_service = ChannelService()
