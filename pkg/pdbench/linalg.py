"""Dense operator primitives with named tensor factors.

Operators carry a :class:`SubsystemLayout` (ordered ``(name, dim)`` pairs). Every layout-aware
function finds factors by name; internal reorderings are undone before a result is returned.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np
from scipy import linalg as sla

from .config import settings
from .errors import (
    HermiticityError,
    LayoutError,
    NormalizationError,
    PositivityError,
    SingularConditionerError,
)


class Normalization(str, Enum):
    NORMALIZED = "normalized"
    SUBNORMALIZED = "subnormalized"
    UNNORMALIZED = "unnormalized-positive"


@dataclass(frozen=True)
class SubsystemLayout:
    """Ordered tensor factors of a Hilbert space."""

    systems: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        systems = tuple((str(name), int(dim)) for name, dim in self.systems)
        names = [name for name, _ in systems]
        if len(set(names)) != len(names):
            raise LayoutError(f"subsystem name collision in {names}")
        for name, dim in systems:
            if dim < 1:
                raise LayoutError(f"subsystem {name!r} has dimension {dim}")
        object.__setattr__(self, "systems", systems)

    @classmethod
    def of(cls, *systems: tuple[str, int]) -> "SubsystemLayout":
        return cls(tuple(systems))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.systems)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(dim for _, dim in self.systems)

    @property
    def dim(self) -> int:
        return math.prod(self.dims)

    def __len__(self) -> int:
        return len(self.systems)

    def __iter__(self):
        return iter(self.systems)

    def __contains__(self, name: object) -> bool:
        return name in self.names

    def __str__(self) -> str:
        return "⊗".join(f"{name}({dim})" for name, dim in self.systems) or "C"

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise LayoutError(f"unknown subsystem {name!r}; layout is {self}") from None

    def dim_of(self, *names: str) -> int:
        return math.prod(self.systems[self.index(name)][1] for name in names)

    def select(self, names: Iterable[str]) -> "SubsystemLayout":
        return SubsystemLayout(tuple(self.systems[self.index(name)] for name in names))

    def without(self, names: Iterable[str]) -> "SubsystemLayout":
        dropped = set(names)
        for name in dropped:
            self.index(name)
        return SubsystemLayout(tuple(s for s in self.systems if s[0] not in dropped))

    def concat(self, other: "SubsystemLayout") -> "SubsystemLayout":
        return SubsystemLayout(self.systems + other.systems)

    def rename(self, mapping: Mapping[str, str]) -> "SubsystemLayout":
        for name in mapping:
            self.index(name)
        return SubsystemLayout(tuple((mapping.get(name, name), dim) for name, dim in self.systems))

    def merge(self, names: Sequence[str], new_name: str) -> "SubsystemLayout":
        """Fuse adjacent factors into one factor of the product dimension."""
        positions = [self.index(name) for name in names]
        if positions != list(range(positions[0], positions[0] + len(positions))):
            raise LayoutError(f"cannot merge non-adjacent subsystems {list(names)} of {self}")
        fused = (new_name, self.dim_of(*names))
        start, stop = positions[0], positions[-1] + 1
        return SubsystemLayout(self.systems[:start] + (fused,) + self.systems[stop:])


@dataclass(frozen=True, eq=False)
class Operator:
    """Square complex matrix acting on the space described by ``layout``."""

    matrix: np.ndarray
    layout: SubsystemLayout

    def __post_init__(self):
        layout = self.layout
        if not isinstance(layout, SubsystemLayout):
            layout = SubsystemLayout(tuple(layout))
        matrix = np.array(self.matrix, dtype=complex)
        if matrix.ndim != 2 or matrix.shape != (layout.dim, layout.dim):
            raise LayoutError(
                f"matrix of shape {matrix.shape} does not match layout {layout} (dimension {layout.dim})"
            )
        self._freeze(matrix)
        object.__setattr__(self, "layout", layout)

    def _freeze(self, matrix: np.ndarray) -> None:
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    @property
    def dim(self) -> int:
        return self.layout.dim

    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def dagger(self) -> "Operator":
        return Operator(self.matrix.conj().T, self.layout)

    def as_hermitian(self) -> "HermitianOperator":
        return HermitianOperator(self.matrix, self.layout)

    def as_density(self, normalization: Optional[Normalization] = None) -> "DensityOperator":
        return DensityOperator(self.matrix, self.layout, normalization)

    def allclose(self, other: "Operator", atol: Optional[float] = None) -> bool:
        atol = settings.equality_tol if atol is None else atol
        if set(other.layout.names) != set(self.layout.names):
            return False
        aligned = _permuted_matrix(other, self.layout.names)
        return bool(np.allclose(self.matrix, aligned, rtol=0.0, atol=atol))

    def _aligned(self, other: "Operator") -> np.ndarray:
        if self.layout.systems != other.layout.select(self.layout.names).systems or len(other.layout) != len(self.layout):
            raise LayoutError(f"layouts {self.layout} and {other.layout} differ")
        return _permuted_matrix(other, self.layout.names)

    def __add__(self, other: "Operator") -> "Operator":
        return rewrap(self.matrix + self._aligned(other), self.layout, self, other, positive=False)

    def __sub__(self, other: "Operator") -> "Operator":
        return rewrap(self.matrix - self._aligned(other), self.layout, self, other, positive=False)

    def __neg__(self) -> "Operator":
        return rewrap(-self.matrix, self.layout, self, positive=False)

    def __mul__(self, scalar: complex) -> "Operator":
        scalar = complex(scalar)
        if scalar.imag != 0.0:
            return Operator(self.matrix * scalar, self.layout)
        return rewrap(self.matrix * scalar.real, self.layout, self, positive=scalar.real >= 0)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class HermitianOperator(Operator):
    def __post_init__(self):
        super().__post_init__()
        m = self.matrix
        scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
        deviation = float(np.max(np.abs(m - m.conj().T))) if m.size else 0.0
        if deviation > settings.hermiticity_tol * scale:
            raise HermiticityError(f"operator on {self.layout} deviates from Hermitian by {deviation:.3e}")
        self._freeze((m + m.conj().T) / 2)


@dataclass(frozen=True, eq=False)
class DensityOperator(HermitianOperator):
    """Positive semidefinite operator tagged with its normalization class."""

    normalization: Optional[Normalization] = None

    def __post_init__(self):
        super().__post_init__()
        lowest = float(sla.eigvalsh(self.matrix)[0])
        if lowest < -settings.psd_tol:
            raise PositivityError(f"operator on {self.layout} has eigenvalue {lowest:.3e}")
        trace = float(np.real(np.trace(self.matrix)))
        inferred = classify_trace(trace)
        if self.normalization is None:
            object.__setattr__(self, "normalization", inferred)
            return
        normalization = Normalization(self.normalization)
        object.__setattr__(self, "normalization", normalization)
        if normalization is Normalization.NORMALIZED and inferred is not Normalization.NORMALIZED:
            raise NormalizationError(f"trace {trace:.12g} is not 1")
        if normalization is Normalization.SUBNORMALIZED and inferred is Normalization.UNNORMALIZED:
            raise NormalizationError(f"trace {trace:.12g} exceeds 1")

    @property
    def trace_value(self) -> float:
        return float(np.real(np.trace(self.matrix)))


OperatorLike = Union[Operator, np.ndarray]


def classify_trace(trace: float) -> Normalization:
    if abs(trace - 1.0) <= settings.psd_tol:
        return Normalization.NORMALIZED
    if trace <= 1.0 + settings.psd_tol:
        return Normalization.SUBNORMALIZED
    return Normalization.UNNORMALIZED


def rewrap(matrix: np.ndarray, layout: SubsystemLayout, *sources: Operator, positive: bool = True) -> Operator:
    """Rebuild an operator of the most specific class all sources share."""
    if positive and all(isinstance(s, DensityOperator) for s in sources):
        return DensityOperator(matrix, layout)
    if all(isinstance(s, HermitianOperator) for s in sources):
        return HermitianOperator(matrix, layout)
    return Operator(matrix, layout)


def _matrix(x: OperatorLike) -> np.ndarray:
    return x.matrix if isinstance(x, Operator) else np.asarray(x, dtype=complex)


def _permuted_matrix(x: Operator, order: Sequence[str]) -> np.ndarray:
    order = tuple(order)
    if sorted(order) != sorted(x.layout.names):
        raise LayoutError(f"order {order} is not a permutation of {x.layout.names}")
    if order == x.layout.names:
        return x.matrix
    perm = [x.layout.index(name) for name in order]
    n = len(perm)
    t = x.matrix.reshape(x.layout.dims * 2)
    t = t.transpose(perm + [p + n for p in perm])
    return t.reshape(x.dim, x.dim)


def tensor(x: Operator, y: Operator, *more: Operator) -> Operator:
    """Kronecker product with concatenated layouts."""
    layout = x.layout.concat(y.layout)
    result = rewrap(np.kron(x.matrix, y.matrix), layout, x, y)
    for z in more:
        result = tensor(result, z)
    return result


def permute(x: Operator, order: Sequence[str]) -> Operator:
    order = tuple(order)
    if order == x.layout.names:
        return x
    return rewrap(_permuted_matrix(x, order), x.layout.select(order), x)


def relabel(x: Operator, mapping: Mapping[str, str]) -> Operator:
    return rewrap(x.matrix, x.layout.rename(mapping), x)


def merge(x: Operator, names: Sequence[str], new_name: str) -> Operator:
    return rewrap(x.matrix, x.layout.merge(names, new_name), x)


def partial_trace(x: Operator, keep: Iterable[str]) -> Operator:
    """Trace out every factor not named in ``keep``; kept factors stay in layout order."""
    keep_set = set(keep)
    for name in keep_set:
        x.layout.index(name)
    kept = [name for name in x.layout.names if name in keep_set]
    traced = [name for name in x.layout.names if name not in keep_set]
    if not traced:
        return x
    dk, dt = x.layout.dim_of(*kept), x.layout.dim_of(*traced)
    m = _permuted_matrix(x, kept + traced).reshape(dk, dt, dk, dt)
    return rewrap(np.einsum("ajbj->ab", m), x.layout.select(kept), x)


def trace_out(x: Operator, names: Iterable[str]) -> Operator:
    dropped = set(names)
    return partial_trace(x, [name for name in x.layout.names if name not in dropped])


def partial_transpose(x: Operator, names: Iterable[str]) -> Operator:
    """Transpose the named factors in the computational basis."""
    n = len(x.layout)
    axes = list(range(2 * n))
    for name in set(names):
        i = x.layout.index(name)
        axes[i], axes[i + n] = axes[i + n], axes[i]
    t = x.matrix.reshape(x.layout.dims * 2).transpose(axes)
    return rewrap(t.reshape(x.dim, x.dim), x.layout, x, positive=False)


def apply_local(
    x: Operator,
    left: np.ndarray,
    on: Sequence[str],
    right: Optional[np.ndarray] = None,
    new_systems: Optional[Sequence[tuple[str, int]]] = None,
) -> Operator:
    """Return ``(L ⊗ I) X (R ⊗ I)†`` with L, R acting on the factors ``on``.

    ``R`` defaults to ``L``. When L maps onto a space of another dimension, ``new_systems``
    names the replacement factors; they take the position of the first factor in ``on``.
    """
    on = tuple(on)
    left = np.asarray(left, dtype=complex)
    conjugation = right is None
    right = left if right is None else np.asarray(right, dtype=complex)
    d_on = x.layout.dim_of(*on)
    if left.ndim != 2 or right.ndim != 2 or left.shape[1] != d_on or right.shape[1] != d_on:
        raise LayoutError(f"local operators of shape {left.shape}, {right.shape} do not act on {on} (dim {d_on})")
    if left.shape[0] != right.shape[0]:
        raise LayoutError("left and right local operators have different output dimensions")
    if new_systems is None:
        if left.shape[0] != d_on:
            raise LayoutError("a dimension-changing local map needs new_systems")
        front = x.layout.select(on)
    else:
        front = SubsystemLayout(tuple(new_systems))
        if front.dim != left.shape[0]:
            raise LayoutError(f"new systems {front} do not match output dimension {left.shape[0]}")
    rest = [name for name in x.layout.names if name not in on]
    d_rest = x.layout.dim_of(*rest)
    m = _permuted_matrix(x, list(on) + rest).reshape(d_on, d_rest, d_on, d_rest)
    out = np.einsum("ia,axby,jb->ixjy", left, m, right.conj(), optimize=True)
    d_out = left.shape[0]
    layout = front.concat(x.layout.select(rest))
    result = Operator(out.reshape(d_out * d_rest, d_out * d_rest), layout)

    if new_systems is None:
        order = list(x.layout.names)
    else:
        order = []
        for name in x.layout.names:
            if name not in on:
                order.append(name)
            elif name == on[0]:
                order.extend(front.names)
    matrix = _permuted_matrix(result, order)
    if conjugation:
        return rewrap(matrix, layout.select(order), x)
    return Operator(matrix, layout.select(order))


def conjugate(x: Operator, unitary: np.ndarray, on: Sequence[str]) -> Operator:
    return apply_local(x, unitary, on)


def dephase(x: Operator, names: Iterable[str]) -> Operator:
    """Completely dephase the named factors in the computational basis."""
    n = len(x.layout)
    t = np.array(x.matrix.reshape(x.layout.dims * 2))
    for name in set(names):
        i = x.layout.index(name)
        d = x.layout.dims[i]
        shape = [1] * (2 * n)
        shape[i] = shape[i + n] = d
        t = t * np.eye(d).reshape(shape)
    return rewrap(t.reshape(x.dim, x.dim), x.layout, x)


def identity(layout: SubsystemLayout) -> HermitianOperator:
    return HermitianOperator(np.eye(layout.dim), layout)


def maximally_mixed(layout: SubsystemLayout) -> DensityOperator:
    return DensityOperator(np.eye(layout.dim) / layout.dim, layout)


def pure_state(vector: np.ndarray, layout: SubsystemLayout) -> DensityOperator:
    v = np.asarray(vector, dtype=complex).reshape(-1)
    return DensityOperator(np.outer(v, v.conj()), layout)


def swap_operator(d: int) -> np.ndarray:
    """The swap F on C^d ⊗ C^d."""
    f = np.zeros((d * d, d * d))
    for a in range(d):
        for b in range(d):
            f[b * d + a, a * d + b] = 1.0
    return f


def hermitian_part(matrix: np.ndarray) -> np.ndarray:
    return (matrix + matrix.conj().T) / 2


def lambda_max(x: OperatorLike) -> float:
    m = hermitian_part(_matrix(x))
    d = m.shape[0]
    return float(sla.eigvalsh(m, subset_by_index=[d - 1, d - 1])[0])


def psd_power(x: OperatorLike, power: float) -> np.ndarray:
    """Matrix power of a PSD operator; eigenvalues within the PSD tolerance of 0 are clipped."""
    w, v = sla.eigh(hermitian_part(_matrix(x)))
    if w[0] < -settings.psd_tol:
        raise PositivityError(f"operator has eigenvalue {w[0]:.3e}")
    w = np.clip(w, 0.0, None)
    if power < 0:
        if w[0] <= settings.singular_tol:
            raise SingularConditionerError(f"smallest eigenvalue {w[0]:.3e} is not above {settings.singular_tol:g}")
        scaled = w ** power
    else:
        scaled = np.where(w > 0, w, 0.0) ** power
    return (v * scaled) @ v.conj().T


def trace_norm(x: OperatorLike) -> float:
    m = _matrix(x)
    if isinstance(x, HermitianOperator) or np.allclose(m, m.conj().T, rtol=0.0, atol=settings.hermiticity_tol):
        return float(np.sum(np.abs(sla.eigvalsh(hermitian_part(m)))))
    return float(np.sum(sla.svdvals(m)))


def two_norm(x: OperatorLike) -> float:
    return float(np.linalg.norm(_matrix(x)))


def weighted_two_norm(x: Operator, conditioner: DensityOperator) -> float:
    """‖ς^{-1/4} X ς^{-1/4}‖₂ with ς acting on its own factors of ``x``."""
    on = conditioner.layout.names
    for name, dim in conditioner.layout:
        if x.layout.dim_of(name) != dim:
            raise LayoutError(f"conditioner factor {name}({dim}) does not match {x.layout}")
    weight = psd_power(conditioner, -0.25)
    return two_norm(apply_local(x, weight, on))


def generalized_fidelity(rho: DensityOperator, sigma: DensityOperator) -> float:
    if set(rho.layout.names) != set(sigma.layout.names):
        raise LayoutError(f"layouts {rho.layout} and {sigma.layout} differ")
    root = psd_power(_permuted_matrix(sigma, rho.layout.names), 0.5)
    overlap = sla.eigvalsh(hermitian_part(root @ rho.matrix @ root))
    fidelity = float(np.sum(np.sqrt(np.clip(overlap, 0.0, None))))
    deficit = (1.0 - rho.trace_value) * (1.0 - sigma.trace_value)
    return fidelity + math.sqrt(max(deficit, 0.0))


def purified_distance(rho: DensityOperator, sigma: DensityOperator) -> float:
    for state in (rho, sigma):
        if state.trace_value > 1.0 + settings.psd_tol:
            raise NormalizationError(f"purified distance needs subnormalized states, got trace {state.trace_value:.12g}")
    fidelity = min(generalized_fidelity(rho, sigma), 1.0)
    return math.sqrt(max(1.0 - fidelity ** 2, 0.0))


def trace_distance(rho: Operator, sigma: Operator) -> float:
    return 0.5 * trace_norm(rho - sigma)
