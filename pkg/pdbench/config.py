"""Configuration management for pdbench."""
from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Runtime settings; every numerical tolerance lives here."""

    model_config = SettingsConfigDict(
        env_prefix="PD_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # Tolerances
    hermiticity_tol: float = 1e-12
    psd_tol: float = 1e-10
    equality_tol: float = 1e-9
    singular_tol: float = 1e-12
    rank_tol: float = 1e-10
    unitarity_tol: float = 1e-12

    # Min-entropy SDP
    sdp_gap_tol: float = 1e-7
    sdp_solver: str = "CLARABEL"
    sdp_solver_tol: float = 1e-10
    sdp_max_iter: int = 200
    max_sdp_dim: int = 256

    # Sampling (seed / samples override config files, CLI flags override these)
    seed: Optional[int] = None
    samples: Optional[int] = None
    workers: int = 1
    retry_factor: int = 4
    stderr_slack: float = 3.0

    # Persistence
    output_dir: str = "./data/runs"
    log_level: str = "INFO"


settings = Settings()
