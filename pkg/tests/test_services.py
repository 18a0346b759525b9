"""Tests for presets, report persistence and run orchestration."""
import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from pdbench.config import settings
from pdbench.errors import ConfigError, ReportNotFoundError
from pdbench.models import ChannelSpec, ExperimentConfig, ExperimentReport, Mode, RunManifest, StateSpec, SuiteConfig
from pdbench.services.dsp_service import DspDecomposition, dsp_service
from pdbench.services.preset_service import preset_service
from pdbench.services.report_service import PLOT_COLUMNS, report_service
from pdbench.services.run_service import run_service


def _write(path, data):
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


def _report(name="r", mode=Mode.NONRANDOMIZED_PD, J=1, r=2, **overrides):
    data = {
        "name": name,
        "mode": mode,
        "blocks": "J=[(1,2)]",
        "J": J,
        "r": r,
        "reference_dim": 2,
        "state": "random",
        "channel": "identity",
        "samples": 10,
        "seed": 0,
        "lhs_mean": 0.25,
        "lhs_stderr": 0.01,
        "rhs_terms": {"bound_h_min": 0.5},
        "rhs_total": 0.5,
        "margin": 0.28,
        "passed": True,
    }
    data.update(overrides)
    return ExperimentReport(**data)


class TestPresetService:
    """Tests for PresetService."""

    def test_get_all_presets(self):
        """Test that both kinds are listed."""
        presets = preset_service.get_all_presets()
        kinds = {p.kind for p in presets}
        assert kinds == {"state", "channel"}
        assert len(presets) == len(preset_service.get_state_presets()) + len(preset_service.get_channel_presets())

    def test_get_preset_by_id(self):
        """Test getting a preset by ID."""
        preset = preset_service.get_preset("depolarizing")
        assert preset is not None
        assert preset.kind == "channel"
        assert preset.parameters == {"p": 0.5}

    def test_get_nonexistent_preset_returns_none(self):
        """Test that getting nonexistent preset returns None."""
        assert preset_service.get_preset("nonexistent-id") is None

    def test_kind_restricts_lookup(self):
        """Test that a channel id is not found among states."""
        assert preset_service.get_preset("identity", "state") is None

    def test_get_categories(self):
        """Test getting sorted categories."""
        categories = preset_service.get_categories()
        assert categories == sorted(categories)
        assert "classically-coherent" in categories
        assert all(p.classically_coherent for p in preset_service.get_presets_by_category("classically-coherent"))

    @pytest.mark.parametrize(
        "preset", ["random", "product", "maximally-entangled", "averaged", "classically-coherent", "maximally-correlated"]
    )
    def test_states_are_normalized(self, preset, randomizable_decomp):
        """Test that every nonzero state preset builds a unit-trace state."""
        state = preset_service.build_state(StateSpec(preset=preset, reference_dim=2), randomizable_decomp, seed=3)
        assert state.trace().real == pytest.approx(1.0)
        assert state.layout.dim_of("A") == randomizable_decomp.dim

    def test_coherent_presets_are_coherent(self, randomizable_decomp):
        """Test the flag in the listing against the built state."""
        for preset in preset_service.get_state_presets():
            if not preset.classically_coherent:
                continue
            state = preset_service.build_state(StateSpec(preset=preset.id), randomizable_decomp, seed=1)
            assert dsp_service.is_classically_coherent(state, randomizable_decomp)

    def test_zero_state(self, mixed_decomp):
        """Test that the zero preset is the zero operator."""
        state = preset_service.build_state(StateSpec(preset="zero"), mixed_decomp)
        assert np.count_nonzero(state.matrix) == 0

    def test_state_seed(self, mixed_decomp):
        """Test that a state built twice from one seed is identical, and its own seed wins."""
        spec = StateSpec(preset="random")
        first = preset_service.build_state(spec, mixed_decomp, seed=4)
        assert np.array_equal(first.matrix, preset_service.build_state(spec, mixed_decomp, seed=4).matrix)
        assert not np.array_equal(first.matrix, preset_service.build_state(spec, mixed_decomp, seed=5).matrix)
        pinned = StateSpec(preset="random", seed=4)
        assert np.array_equal(first.matrix, preset_service.build_state(pinned, mixed_decomp, seed=99).matrix)

    def test_unknown_preset(self, mixed_decomp):
        """Test that unknown presets name the known ones."""
        with pytest.raises(ConfigError, match="known presets"):
            preset_service.build_state(StateSpec(preset="ghz"), mixed_decomp)

    def test_unknown_parameter(self, mixed_decomp):
        """Test that parameters a preset does not take are rejected."""
        with pytest.raises(ConfigError):
            preset_service.build_channel(ChannelSpec(preset="identity", params={"p": 0.1}), mixed_decomp)

    def test_coherent_preset_needs_randomizable_blocks(self, mixed_decomp):
        """Test that classically coherent presets require CC1."""
        with pytest.raises(ConfigError, match="CC1"):
            preset_service.build_state(StateSpec(preset="classically-coherent"), mixed_decomp)

    def test_partial_trace_default_dims(self, randomizable_decomp):
        """Test that d_A = 4 is split into two qubits."""
        channel = preset_service.build_channel(ChannelSpec(preset="partial-trace"), randomizable_decomp)
        assert channel.d_in == 4
        assert channel.d_out == 2

    def test_partial_trace_needs_dims(self):
        """Test that a qubit cannot be split."""
        with pytest.raises(ConfigError):
            preset_service.build_channel(ChannelSpec(preset="partial-trace"), DspDecomposition(((1, 2),)))

    def test_invalid_parameter_value(self, mixed_decomp):
        """Test that a builder ValueError surfaces as ConfigError."""
        with pytest.raises(ConfigError):
            preset_service.build_channel(ChannelSpec(preset="depolarizing", params={"p": 2.0}), mixed_decomp)

    def test_describe(self):
        """Test the preset description used in reports."""
        assert preset_service.describe(ChannelSpec(preset="identity")) == "identity"
        spec = ChannelSpec(preset="random-kraus", params={"output_dim": 2, "k": 3})
        assert preset_service.describe(spec) == "random-kraus(k=3, output_dim=2)"


class TestReportService:
    """Tests for ReportService."""

    def test_write_and_load_report(self, tmp_path):
        """Test writing a report and reading it back."""
        report = _report(name="depolarized qubit/1")
        relative = report_service.write_report(tmp_path, 3, report)
        assert relative == "reports/003-depolarized_qubit_1.jsonl"
        assert report_service.load_report(tmp_path / relative) == report

    def test_report_is_one_sorted_line(self, tmp_path):
        """Test that the payload is a single JSON line with sorted keys."""
        relative = report_service.write_report(tmp_path, 0, _report())
        lines = (tmp_path / relative).read_text(encoding="utf-8").splitlines()
        assert len(lines) == 1
        keys = list(json.loads(lines[0]))
        assert keys == sorted(keys)

    def test_infinite_entropy_survives(self, tmp_path):
        """Test that +∞ entropies are written and read back."""
        report = _report(rhs_terms={"h_min_Astar|RE": math.inf, "bound_h_min": 0.0}, rhs_total=0.0)
        assert "Infinity" in report_service.canonical(report)
        loaded = report_service.load_report(tmp_path / report_service.write_report(tmp_path, 0, report))
        assert loaded.rhs_terms["h_min_Astar|RE"] == math.inf

    def test_missing_report(self, tmp_path):
        """Test that a missing report is an I/O error."""
        with pytest.raises(ReportNotFoundError):
            report_service.load_report(tmp_path / "nope.jsonl")
        with pytest.raises(FileNotFoundError):
            report_service.load_manifest(tmp_path / "manifest.json")

    def _manifest(self, out, reports):
        paths = [report_service.write_report(out, i, report) for i, report in enumerate(reports)]
        manifest = RunManifest(config_hash="0" * 64, artifact_version="test", reports=paths)
        return report_service.write_manifest(out, manifest)

    def _rows(self, path):
        with open(path, newline="", encoding="utf-8") as f:
            return list(csv.reader(f))

    def test_plot_data_empty(self, tmp_path):
        """Test that an empty run gives a header-only CSV."""
        manifest = self._manifest(tmp_path, [])
        rows = self._rows(report_service.emit_plot_data(manifest, tmp_path / "plot.csv"))
        assert rows == [list(PLOT_COLUMNS)]

    def test_plot_data_single_row(self, tmp_path):
        """Test that one report gives one row at full precision."""
        manifest = self._manifest(tmp_path, [_report(lhs_mean=0.1)])
        rows = self._rows(report_service.emit_plot_data(manifest, tmp_path / "plot.csv"))
        assert len(rows) == 2
        row = dict(zip(rows[0], rows[1]))
        assert row["mode"] == "nonrandomized-pd"
        assert row["N"] == "10"
        assert float(row["lhs_mean"]) == 0.1
        assert row["lhs_mean"] == "%.17e" % 0.1

    def test_plot_data_sort_order(self, tmp_path):
        """Test ordering by (mode, J, r) with ties kept in manifest order."""
        reports = [
            _report(name="a", mode=Mode.RANDOMIZED_PD, J=3, r=1),
            _report(name="b", mode=Mode.NONRANDOMIZED_PD, J=2, r=2),
            _report(name="c", mode=Mode.RANDOMIZED_PD, J=2, r=2, lhs_mean=0.2),
            _report(name="d", mode=Mode.RANDOMIZED_PD, J=2, r=2, lhs_mean=0.3),
        ]
        manifest = self._manifest(tmp_path, reports)
        rows = self._rows(report_service.emit_plot_data(manifest, tmp_path / "plot.csv"))[1:]
        keys = [(row[0], row[1], row[2], float(row[4])) for row in rows]
        assert keys == [
            ("nonrandomized-pd", "2", "2", 0.25),
            ("randomized-pd", "2", "2", 0.2),
            ("randomized-pd", "2", "2", 0.3),
            ("randomized-pd", "3", "1", 0.25),
        ]


class TestRunService:
    """Tests for RunService."""

    def test_parse_config_defaults(self, tmp_path):
        """Test that omitted fields take their defaults and the literal is canonicalized."""
        path = _write(tmp_path / "cfg.json", {"decomposition": "J=[ (1, 2),(2,1) ]", "mode": "nonrandomized-pd"})
        config = run_service.parse_config(path)
        assert config.samples == 2000
        assert config.seed == 0
        assert config.conditioner.value == "sdp-optimal"
        assert config.decomposition == "J=[(1,2), (2,1)]"

    def test_parse_config_reports_json_position(self, tmp_path):
        """Test that malformed JSON errors carry line and column."""
        path = tmp_path / "bad.json"
        path.write_text('{\n  "decomposition":\n}\n', encoding="utf-8")
        with pytest.raises(ConfigError) as exc:
            run_service.parse_config(path)
        assert f"{path}:3:1:" in str(exc.value)

    def test_parse_config_rejects_non_object(self, tmp_path):
        """Test that the top level must be an object."""
        with pytest.raises(ConfigError):
            run_service.parse_config(_write(tmp_path / "cfg.json", [1, 2]))

    def test_randomized_mode_needs_cc1(self, tmp_path, sample_config_data):
        """Test that randomized modes reject mixed block shapes."""
        data = {**sample_config_data, "decomposition": "J=[(1,2), (2,1)]", "mode": "randomized-pd"}
        with pytest.raises(ConfigError, match="CC1"):
            run_service.parse_config(_write(tmp_path / "cfg.json", data))

    def test_randomized_mode_needs_coherent_state(self, tmp_path, sample_config_data):
        """Test that J > 1 randomized modes need a classically coherent preset."""
        data = {**sample_config_data, "decomposition": "J=[(1,2), (1,2)]", "mode": "randomized-pd"}
        with pytest.raises(ConfigError, match="classically coherent"):
            run_service.parse_config(_write(tmp_path / "cfg.json", data))

    @pytest.mark.parametrize(
        "change",
        [
            {"state": {"preset": "ghz"}},
            {"channel": {"preset": "amplitude-damping"}},
            {"decomposition": "J=[(0,2)]"},
            {"seed": 2**64},
            {"samples": 1},
            {"unknown": True},
            {"mode": "dequantization"},
        ],
    )
    def test_invalid_configs(self, tmp_path, sample_config_data, change):
        """Test that every malformed config is a ConfigError."""
        with pytest.raises(ConfigError):
            run_service.parse_config(_write(tmp_path / "cfg.json", {**sample_config_data, **change}))

    def test_canonical_round_trip(self, tmp_path, sample_config_data):
        """Test that the canonical text parses back to the same config."""
        config = run_service.parse_config(_write(tmp_path / "cfg.json", sample_config_data))
        again = tmp_path / "again.json"
        again.write_text(run_service.canonical_text(config), encoding="utf-8")
        reparsed = run_service.parse_config(again)
        assert reparsed == config
        assert run_service.config_hash(reparsed) == run_service.config_hash(config)

    def test_parse_suite_wraps_single_experiment(self, tmp_path, sample_config_data):
        """Test that an experiment document is accepted as a suite."""
        suite = run_service.parse_suite(_write(tmp_path / "cfg.json", sample_config_data))
        assert suite.name == "depolarized"
        assert len(suite.experiments) == 1

    def test_expand_suite(self, sample_config_data):
        """Test that sweeps contribute their instances after the listed experiments."""
        suite = SuiteConfig(
            experiments=[ExperimentConfig(**sample_config_data)],
            sweeps=[{"mode": "decoupling-j1", "instances": 2, "samples": 10}],
        )
        configs = run_service.expand(suite)
        assert len(configs) == 3
        assert configs[0].name == "depolarized"
        assert configs[1].name == "sweep-decoupling-j1-000"

    def test_override_precedence(self, monkeypatch):
        """Test CLI over environment over config file."""
        monkeypatch.setattr(settings, "seed", None)
        monkeypatch.setattr(settings, "samples", None)
        assert run_service.effective_overrides() == {}
        monkeypatch.setattr(settings, "seed", 9)
        monkeypatch.setattr(settings, "samples", 40)
        assert run_service.effective_overrides() == {"seed": 9, "samples": 40}
        assert run_service.effective_overrides(seed=3) == {"seed": 3, "samples": 40}

    def test_override_validation(self):
        """Test that overrides are range checked."""
        with pytest.raises(ConfigError):
            run_service.effective_overrides(seed=-1)
        with pytest.raises(ConfigError):
            run_service.effective_overrides(samples=1)

    def test_apply_overrides(self, sample_config_data):
        """Test that overrides reach every experiment and sweep."""
        suite = SuiteConfig(experiments=[ExperimentConfig(**sample_config_data)], sweeps=[{"instances": 1}])
        updated = run_service.apply_overrides(suite, seed=11, samples=20)
        assert updated.experiments[0].seed == 11
        assert updated.sweeps[0].samples == 20
        assert suite.experiments[0].seed == 7

    def test_run_writes_reports_and_manifest(self, tmp_path, sample_config_data):
        """Test a full run of one config."""
        config = ExperimentConfig(**sample_config_data)
        manifest = run_service.run(config, out_dir=tmp_path)
        assert manifest.exit_code == 0
        assert manifest.reports == ["reports/000-depolarized.jsonl"]
        assert len(manifest.wall_times) == 1
        assert report_service.load_manifest(tmp_path / "manifest.json").config_hash == manifest.config_hash
        report = report_service.load_reports(tmp_path / "manifest.json")[0]
        assert report.lhs_mean <= 1e-10
        assert report.seed == 7

    def test_run_is_deterministic(self, tmp_path, sample_config_data):
        """Test that two runs with the same seed write byte-identical reports."""
        config = ExperimentConfig(**{**sample_config_data, "channel": {"preset": "depolarizing"}})
        first = run_service.run(config, out_dir=tmp_path / "one", seed=42)
        second = run_service.run(config, out_dir=tmp_path / "two", seed=42)
        assert first.seed == second.seed == 42
        assert first.config_hash == second.config_hash
        one = (tmp_path / "one" / first.reports[0]).read_bytes()
        two = (tmp_path / "two" / second.reports[0]).read_bytes()
        assert one == two

    def test_shipped_configs_parse(self):
        """Test that every config under configs/ is valid."""
        paths = sorted((Path(__file__).parent.parent / "configs").glob("*.json"))
        assert paths
        for path in paths:
            suite = run_service.parse_suite(path)
            assert suite.experiments or suite.sweeps
