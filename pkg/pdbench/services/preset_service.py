"""Preset service for input states and channels."""
import logging
import math
from typing import Any, Dict, List, Optional

import numpy as np

from ..errors import ConfigError
from ..linalg import DensityOperator, SubsystemLayout, tensor
from ..models import ChannelSpec, PresetInfo, StateSpec
from .channel_service import CpMap, channel_service
from .dsp_service import DspDecomposition, dsp_service
from .sampling_service import RngStream, StreamDomain, sampling_service

logger = logging.getLogger(__name__)


# Built-in state presets
STATE_PRESETS = [
    PresetInfo(
        id="random",
        name="Random mixed state",
        description="Marginal on A⊗R of a Haar-random pure state; full rank",
        kind="state",
        category="generic",
    ),
    PresetInfo(
        id="product",
        name="Random product state",
        description="ρ^A ⊗ ρ^R with independent random factors",
        kind="state",
        category="generic",
    ),
    PresetInfo(
        id="maximally-entangled",
        name="Maximally entangled",
        description="Φ^{AR} with d_R = d_A; the reference dimension is ignored",
        kind="state",
        category="entangled",
    ),
    PresetInfo(
        id="averaged",
        name="Block-averaged random state",
        description="Ψ_av = ⊕_j Ψ_jj ⊗ π_j of a random state; left unchanged by every H_× unitary",
        kind="state",
        category="generic",
    ),
    PresetInfo(
        id="zero",
        name="Zero operator",
        description="The zero operator; every entropy is +∞ and every bound is 0",
        kind="state",
        category="degenerate",
        classically_coherent=True,
    ),
    PresetInfo(
        id="classically-coherent",
        name="Random classically coherent state",
        description="Σ_{kk'} |kk⟩⟨k'k'|^{A_c R_c} ⊗ ϱ_{kk'} cut from a random parent on K⊗A_r⊗R_r",
        kind="state",
        category="classically-coherent",
        classically_coherent=True,
    ),
    PresetInfo(
        id="maximally-correlated",
        name="Maximally correlated state",
        description="(1/√J) Σ_k |kk⟩^{A_c R_c} |Φ_r⟩^{A_r R_r}; the reference dimension is r",
        kind="state",
        category="classically-coherent",
        classically_coherent=True,
    ),
]

# Built-in channel presets
CHANNEL_PRESETS = [
    PresetInfo(
        id="identity",
        name="Identity",
        description="id: A → E",
        kind="channel",
        category="unitary",
    ),
    PresetInfo(
        id="depolarizing",
        name="Depolarizing",
        description="ρ ↦ (1 − p)ρ + p Tr[ρ] π",
        kind="channel",
        category="noise",
        parameters={"p": 0.5},
    ),
    PresetInfo(
        id="completely-depolarizing",
        name="Completely depolarizing",
        description="ρ ↦ Tr[ρ] π^E; output independent of input",
        kind="channel",
        category="noise",
        parameters={"output_dim": None},
    ),
    PresetInfo(
        id="dephasing",
        name="Completely dephasing",
        description="ρ ↦ Σ_x ⟨x|ρ|x⟩ |x⟩⟨x|",
        kind="channel",
        category="noise",
    ),
    PresetInfo(
        id="partial-trace",
        name="Partial trace",
        description="A = ⊗_i C^{dims[i]}; keeps the factors listed in keep",
        kind="channel",
        category="reduction",
        parameters={"dims": None, "keep": [0]},
    ),
    PresetInfo(
        id="random-kraus",
        name="Random Kraus channel",
        description="Trace-preserving map with k Kraus operators cut from a Haar isometry",
        kind="channel",
        category="generic",
        parameters={"k": 2, "output_dim": None},
    ),
]


class PresetService:
    """Lookup and construction of built-in presets."""

    def get_all_presets(self) -> List[PresetInfo]:
        return STATE_PRESETS + CHANNEL_PRESETS

    def get_state_presets(self) -> List[PresetInfo]:
        return STATE_PRESETS

    def get_channel_presets(self) -> List[PresetInfo]:
        return CHANNEL_PRESETS

    def get_preset(self, preset_id: str, kind: Optional[str] = None) -> Optional[PresetInfo]:
        """Get a preset by ID, optionally restricted to one kind."""
        for preset in self.get_all_presets():
            if preset.id == preset_id and (kind is None or preset.kind == kind):
                return preset
        return None

    def get_presets_by_category(self, category: str) -> List[PresetInfo]:
        return [p for p in self.get_all_presets() if p.category == category]

    def get_categories(self) -> List[str]:
        return sorted(set(p.category for p in self.get_all_presets()))

    def _require(self, preset_id: str, kind: str) -> PresetInfo:
        preset = self.get_preset(preset_id, kind)
        if preset is None:
            known = ", ".join(p.id for p in self.get_all_presets() if p.kind == kind)
            raise ConfigError(f"unknown {kind} preset {preset_id!r}; known presets: {known}")
        return preset

    def _params(self, preset: PresetInfo, given: Dict[str, Any]) -> Dict[str, Any]:
        unknown = set(given) - set(preset.parameters)
        if unknown:
            raise ConfigError(f"{preset.kind} preset {preset.id!r} does not take parameters {sorted(unknown)}")
        return {**preset.parameters, **given}

    def build_state(self, spec: StateSpec, decomp: DspDecomposition, seed: int = 0) -> DensityOperator:
        """Ψ on A⊗R, or on A⊗R_c⊗R_r for the classically coherent presets when J > 1."""
        preset = self._require(spec.preset, "state")
        self._params(preset, spec.params)
        rng = RngStream(spec.seed if spec.seed is not None else seed, 0, StreamDomain.STATE).generator()
        d, m = decomp.dim, spec.reference_dim
        layout = SubsystemLayout.of(("A", d), ("R", m))

        if preset.id == "random":
            return sampling_service.random_density(layout, rng)
        if preset.id == "product":
            return tensor(
                sampling_service.random_density(layout.select(["A"]), rng),
                sampling_service.random_density(layout.select(["R"]), rng),
            )
        if preset.id == "maximally-entangled":
            return dsp_service.dsp_maximally_entangled(decomp, names=("A", "R"))
        if preset.id == "averaged":
            return dsp_service.averaged_state(sampling_service.random_density(layout, rng), decomp)

        coherent_layout = decomp.J > 1 and decomp.is_randomizable
        if preset.id == "zero":
            if coherent_layout:
                layout = SubsystemLayout.of(("A", d), ("R_c", decomp.J), ("R_r", m))
            return DensityOperator(np.zeros((layout.dim, layout.dim)), layout)
        if preset.id == "classically-coherent":
            if not decomp.is_randomizable:
                raise ConfigError(f"state preset {preset.id!r} requires CC1, got {decomp.to_literal()}")
            return sampling_service.random_classically_coherent(decomp, m, rng).state
        if preset.id == "maximally-correlated":
            if not decomp.is_randomizable:
                raise ConfigError(f"state preset {preset.id!r} requires CC1, got {decomp.to_literal()}")
            r = decomp.r
            phi = np.eye(r).reshape(-1) / math.sqrt(r)
            block = np.outer(phi, phi) / decomp.J
            blocks = np.broadcast_to(block, (decomp.J, decomp.J, r * r, r * r))
            return dsp_service.classically_coherent(blocks, decomp, r).state
        raise ConfigError(f"state preset {preset.id!r} has no builder")

    def build_channel(self, spec: ChannelSpec, decomp: DspDecomposition, seed: int = 0) -> CpMap:
        preset = self._require(spec.preset, "channel")
        params = self._params(preset, spec.params)
        d = decomp.dim

        try:
            if preset.id == "identity":
                return channel_service.identity(d)
            if preset.id == "depolarizing":
                return channel_service.depolarizing(d, float(params["p"]))
            if preset.id == "completely-depolarizing":
                return channel_service.completely_depolarizing(d, int(params["output_dim"] or d))
            if preset.id == "dephasing":
                return channel_service.dephasing(d)
            if preset.id == "partial-trace":
                dims = params["dims"]
                if dims is None:
                    if d % 2 or d == 2:
                        raise ConfigError(f"partial-trace needs explicit dims for d_A = {d}")
                    dims = [2, d // 2]
                if math.prod(dims) != d:
                    raise ConfigError(f"partial-trace dims {dims} do not multiply to d_A = {d}")
                return channel_service.partial_trace_channel(dims, params["keep"])
            if preset.id == "random-kraus":
                rng = RngStream(spec.seed if spec.seed is not None else seed, 0, StreamDomain.CHANNEL).generator()
                return channel_service.random_kraus(d, int(params["output_dim"] or d), int(params["k"]), rng)
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"channel preset {preset.id!r} with parameters {params}: {exc}") from exc
        raise ConfigError(f"channel preset {preset.id!r} has no builder")

    def describe(self, spec: StateSpec | ChannelSpec) -> str:
        """Preset name with its parameters, e.g. ``depolarizing(p=0.3)``."""
        if not spec.params:
            return spec.preset
        args = ", ".join(f"{key}={value}" for key, value in sorted(spec.params.items()))
        return f"{spec.preset}({args})"


preset_service = PresetService()
