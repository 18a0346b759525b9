"""Pydantic models for experiment configs, reports and manifests."""
from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

U64_MAX = 2**64 - 1


class Mode(str, Enum):
    """Which inequality an experiment checks."""
    NONRANDOMIZED_PD = "nonrandomized-pd"
    RANDOMIZED_PD = "randomized-pd"
    DECOUPLING_J1 = "decoupling-j1"
    DEQUANTIZATION = "dequantization"

    @property
    def randomized(self) -> bool:
        return self is not Mode.NONRANDOMIZED_PD


class ConditionerPolicy(str, Enum):
    """How the conditioner ς is chosen for the right-hand side."""
    SDP_OPTIMAL = "sdp-optimal"
    MAXIMALLY_MIXED = "maximally-mixed"


def _decomposition(text: str):
    from .services.dsp_service import DspDecomposition

    return DspDecomposition.from_literal(text)


class StateSpec(BaseModel):
    """Input state Ψ^{AR} by preset name."""
    model_config = ConfigDict(extra="forbid")

    preset: str = "random"
    reference_dim: int = Field(default=2, ge=1, le=64)
    params: Dict[str, Any] = {}
    seed: Optional[int] = Field(default=None, ge=0, le=U64_MAX)


class ChannelSpec(BaseModel):
    """Channel T: A → E by preset name."""
    model_config = ConfigDict(extra="forbid")

    preset: str = "identity"
    params: Dict[str, Any] = {}
    seed: Optional[int] = Field(default=None, ge=0, le=U64_MAX)


class ExperimentConfig(BaseModel):
    """One experiment: a decomposition, a state, a channel and a mode."""
    model_config = ConfigDict(extra="forbid")

    name: str = "experiment"
    decomposition: str
    mode: Mode
    state: StateSpec = Field(default_factory=StateSpec)
    channel: ChannelSpec = Field(default_factory=ChannelSpec)
    samples: int = Field(default=2000, ge=2)
    seed: int = Field(default=0, ge=0, le=U64_MAX)
    conditioner: ConditionerPolicy = ConditionerPolicy.SDP_OPTIMAL

    @field_validator("decomposition")
    @classmethod
    def canonical_decomposition(cls, value: str) -> str:
        return _decomposition(value).to_literal()

    @model_validator(mode="after")
    def check_mode_constraints(self) -> "ExperimentConfig":
        decomp = self.decomp
        if self.mode.randomized and not decomp.is_randomizable:
            raise ValueError(
                f"mode {self.mode.value} requires CC1 (all l_j = 1, common r_j); got {decomp.to_literal()}"
            )
        if self.mode is Mode.DECOUPLING_J1 and decomp.J != 1:
            raise ValueError(f"mode decoupling-j1 requires J = 1, got J = {decomp.J}")
        if self.mode is Mode.DEQUANTIZATION and (decomp.r != 1 or decomp.J < 2):
            raise ValueError(f"mode dequantization requires r = 1 and J >= 2, got {decomp.to_literal()}")
        return self

    @property
    def decomp(self):
        return _decomposition(self.decomposition)


class SweepSpec(BaseModel):
    """Random instances of one mode within dimension bounds."""
    model_config = ConfigDict(extra="forbid")

    mode: Mode = Mode.NONRANDOMIZED_PD
    instances: int = Field(default=10, ge=1)
    seed: int = Field(default=0, ge=0, le=U64_MAX)
    samples: int = Field(default=2000, ge=2)
    max_blocks: int = Field(default=3, ge=1)
    max_left: int = Field(default=3, ge=1)
    max_right: int = Field(default=3, ge=1)
    max_reference_dim: int = Field(default=4, ge=1)
    output_dim: Optional[int] = Field(default=None, ge=1)
    name_prefix: str = "sweep"


class SuiteConfig(BaseModel):
    """A list of experiments plus random sweeps run under one manifest."""
    model_config = ConfigDict(extra="forbid")

    name: str = "suite"
    experiments: List[ExperimentConfig] = []
    sweeps: List[SweepSpec] = []


class ExperimentReport(BaseModel):
    """Outcome of one experiment; every number is named."""
    model_config = ConfigDict(ser_json_inf_nan="constants")

    name: str
    mode: Mode
    blocks: str
    J: int
    r: int
    reference_dim: int
    state: str
    channel: str
    samples: int
    seed: int
    lhs_mean: float
    lhs_stderr: float
    rhs_terms: Dict[str, float]
    rhs_total: float
    margin: float
    passed: bool
    retried: bool = False
    sdp_gap: Optional[float] = None


class RunManifest(BaseModel):
    """Index of one run; the only place holding timestamps and wall times."""
    config_hash: str
    seed: Optional[int] = None
    timestamp: datetime = Field(default_factory=datetime.now)
    artifact_version: str
    reports: List[str] = []
    wall_times: List[float] = []
    exit_code: int = 0


class Lemma7Report(BaseModel):
    """Monte Carlo squared weighted norm against its exact average."""
    J: int
    samples: int
    seed: int
    mc_mean: float
    mc_stderr: float
    exact: float
    margin: float
    passed: bool


class TwirlCaseResult(BaseModel):
    """Empirical twisted twirl against the closed form for one index pattern."""
    case: str
    j: int
    k: int
    m: int
    n: int
    distance: float
    threshold: float
    passed: bool


class TwirlReport(BaseModel):
    """All twisted-twirl cases checked for one decomposition."""
    blocks: str
    samples: int
    seed: int
    cases: List[TwirlCaseResult] = []
    passed: bool = True


class PresetInfo(BaseModel):
    """A built-in state or channel preset."""
    id: str
    name: str
    description: str
    kind: str  # state, channel
    category: str = "general"
    classically_coherent: bool = False
    parameters: Dict[str, Any] = {}
