"""Services package."""
from .dsp_service import dsp_service
from .sampling_service import sampling_service
from .channel_service import channel_service
from .entropy_service import entropy_service
from .preset_service import preset_service
from .experiment_service import experiment_service
from .report_service import report_service
from .run_service import run_service

__all__ = [
    "dsp_service",
    "sampling_service",
    "channel_service",
    "entropy_service",
    "preset_service",
    "experiment_service",
    "report_service",
    "run_service",
]
