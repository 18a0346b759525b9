"""Report persistence: one JSON line per experiment, a manifest per run, a CSV view for plotting."""
import csv
import json
import logging
import re
from pathlib import Path
from typing import List, Union

from ..errors import ReportNotFoundError
from ..models import ExperimentReport, RunManifest

logger = logging.getLogger(__name__)

PLOT_COLUMNS = ("mode", "J", "r", "N", "lhs_mean", "lhs_stderr", "rhs_total", "margin")
MANIFEST_NAME = "manifest.json"
REPORTS_DIR = "reports"

PathLike = Union[str, Path]


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name).strip("_") or "experiment"


def _number(value: float) -> str:
    return "%.17e" % value


class ReportService:
    """Reads and writes run artifacts under an output directory."""

    def canonical(self, report: ExperimentReport) -> str:
        """The report payload as one line of sorted-key JSON."""
        return json.dumps(report.model_dump(mode="json"), sort_keys=True)

    def write_report(self, out_dir: PathLike, index: int, report: ExperimentReport) -> str:
        """Write a report and return its path relative to ``out_dir``."""
        relative = Path(REPORTS_DIR) / f"{index:03d}-{_slug(report.name)}.jsonl"
        path = Path(out_dir) / relative
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.canonical(report) + "\n", encoding="utf-8")
        logger.debug("wrote report %s", path)
        return relative.as_posix()

    def load_report(self, path: PathLike) -> ExperimentReport:
        path = Path(path)
        if not path.is_file():
            raise ReportNotFoundError(f"report {path} does not exist")
        with open(path, encoding="utf-8") as f:
            return ExperimentReport(**json.loads(f.readline()))

    def write_manifest(self, out_dir: PathLike, manifest: RunManifest) -> Path:
        path = Path(out_dir) / MANIFEST_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(manifest.model_dump(mode="json"), sort_keys=True, indent=2) + "\n", encoding="utf-8")
        logger.info("wrote manifest %s (%d reports, exit code %d)", path, len(manifest.reports), manifest.exit_code)
        return path

    def load_manifest(self, path: PathLike) -> RunManifest:
        path = Path(path)
        if not path.is_file():
            raise ReportNotFoundError(f"manifest {path} does not exist")
        with open(path, encoding="utf-8") as f:
            return RunManifest(**json.load(f))

    def load_reports(self, manifest_path: PathLike) -> List[ExperimentReport]:
        """Every report a manifest lists, resolved relative to the manifest's directory."""
        manifest_path = Path(manifest_path)
        manifest = self.load_manifest(manifest_path)
        return [self.load_report(manifest_path.parent / relative) for relative in manifest.reports]

    def emit_plot_data(self, manifest_path: PathLike, out: PathLike) -> Path:
        """Long-form CSV of every report, sorted by (mode, J, r) and then manifest order."""
        reports = self.load_reports(manifest_path)
        ordered = sorted(enumerate(reports), key=lambda item: (item[1].mode.value, item[1].J, item[1].r, item[0]))
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(PLOT_COLUMNS)
            for _, report in ordered:
                writer.writerow([
                    report.mode.value,
                    report.J,
                    report.r,
                    report.samples,
                    _number(report.lhs_mean),
                    _number(report.lhs_stderr),
                    _number(report.rhs_total),
                    _number(report.margin),
                ])
        logger.info("wrote %d plot rows to %s", len(ordered), out)
        return out


report_service = ReportService()
