"""Config parsing and run orchestration."""
import hashlib
import json
import logging
import time
from pathlib import Path
from typing import List, Optional, Union

from pydantic import BaseModel, ValidationError

from .. import __version__
from ..config import settings
from ..errors import ConfigError
from ..models import U64_MAX, ExperimentConfig, RunManifest, SuiteConfig
from .experiment_service import experiment_service
from .preset_service import preset_service
from .report_service import report_service

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _describe(exc: ValidationError, path: PathLike) -> str:
    lines = [f"{path}: invalid configuration"]
    for error in exc.errors():
        location = ".".join(str(part) for part in error["loc"]) or "<root>"
        lines.append(f"  {location}: {error['msg']}")
    return "\n".join(lines)


class RunService:
    """Turns config files into experiments and experiments into persisted reports."""

    def _load(self, path: PathLike) -> dict:
        text = Path(path).read_text(encoding="utf-8")
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a JSON object at the top level")
        return data

    def check_presets(self, config: ExperimentConfig) -> None:
        """Preset names exist; randomized modes with J > 1 need a classically coherent state."""
        state = preset_service.get_preset(config.state.preset, "state")
        if state is None:
            raise ConfigError(f"{config.name}: unknown state preset {config.state.preset!r}")
        if preset_service.get_preset(config.channel.preset, "channel") is None:
            raise ConfigError(f"{config.name}: unknown channel preset {config.channel.preset!r}")
        if config.mode.randomized and config.decomp.J > 1 and not state.classically_coherent:
            raise ConfigError(
                f"{config.name}: mode {config.mode.value} needs a classically coherent state preset, "
                f"got {state.id!r}"
            )

    def parse_config(self, path: PathLike) -> ExperimentConfig:
        data = self._load(path)
        try:
            config = ExperimentConfig.model_validate(data)
        except ValidationError as exc:
            raise ConfigError(_describe(exc, path)) from exc
        self.check_presets(config)
        return config

    def parse_suite(self, path: PathLike) -> SuiteConfig:
        """A suite document, or a single experiment document wrapped as a one-entry suite."""
        data = self._load(path)
        try:
            if "decomposition" in data:
                config = ExperimentConfig.model_validate(data)
                suite = SuiteConfig(name=config.name, experiments=[config])
            else:
                suite = SuiteConfig.model_validate(data)
        except ValidationError as exc:
            raise ConfigError(_describe(exc, path)) from exc
        for config in suite.experiments:
            self.check_presets(config)
        return suite

    def canonical_text(self, config: BaseModel) -> str:
        return json.dumps(config.model_dump(mode="json"), sort_keys=True, indent=2)

    def config_hash(self, config: BaseModel) -> str:
        return hashlib.sha256(self.canonical_text(config).encode("utf-8")).hexdigest()

    def effective_overrides(self, seed: Optional[int] = None, samples: Optional[int] = None) -> dict:
        """CLI values first, then PD_SEED / PD_SAMPLES; whatever is left comes from the config file."""
        update = {}
        seed = seed if seed is not None else settings.seed
        samples = samples if samples is not None else settings.samples
        if seed is not None:
            if not 0 <= seed <= U64_MAX:
                raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed}")
            update["seed"] = seed
        if samples is not None:
            if samples < 2:
                raise ConfigError(f"samples must be at least 2, got {samples}")
            update["samples"] = samples
        return update

    def apply_overrides(self, suite: SuiteConfig, seed: Optional[int] = None, samples: Optional[int] = None) -> SuiteConfig:
        update = self.effective_overrides(seed, samples)
        if not update:
            return suite
        return suite.model_copy(update={
            "experiments": [config.model_copy(update=update) for config in suite.experiments],
            "sweeps": [sweep.model_copy(update=update) for sweep in suite.sweeps],
        })

    def expand(self, suite: SuiteConfig) -> List[ExperimentConfig]:
        configs = list(suite.experiments)
        for sweep in suite.sweeps:
            configs.extend(experiment_service.random_instance(sweep, index) for index in range(sweep.instances))
        return configs

    def run(
        self,
        config: Union[ExperimentConfig, SuiteConfig],
        out_dir: Optional[PathLike] = None,
        seed: Optional[int] = None,
        samples: Optional[int] = None,
    ) -> RunManifest:
        """Run every experiment, persist one report each and write the manifest."""
        suite = config if isinstance(config, SuiteConfig) else SuiteConfig(name=config.name, experiments=[config])
        suite = self.apply_overrides(suite, seed, samples)
        out = Path(out_dir) if out_dir is not None else Path(settings.output_dir)
        configs = self.expand(suite)
        logger.info("running %d experiment(s) from %s into %s", len(configs), suite.name, out)

        paths, wall_times, passed = [], [], []
        for index, experiment in enumerate(configs):
            start = time.perf_counter()
            report = experiment_service.run_experiment(experiment)
            wall_times.append(time.perf_counter() - start)
            paths.append(report_service.write_report(out, index, report))
            passed.append(report.passed)

        manifest = RunManifest(
            config_hash=self.config_hash(suite),
            seed=self.effective_overrides(seed, samples).get("seed"),
            artifact_version=__version__,
            reports=paths,
            wall_times=wall_times,
            exit_code=0 if all(passed) else 1,
        )
        report_service.write_manifest(out, manifest)
        return manifest


run_service = RunService()
