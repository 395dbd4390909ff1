from collections import Counter
from pathlib import Path
from typing import Any, Dict

from src.config import RunConfig
from src.errors import ConfigurationError, InputError
from src.fiducial import load_template, save_template
from src.logging_config import get_logger
from src.pipeline import PipelineResult, run_method
from src.schemas import write_events_csv
from src.signal_io import load_csv

logger = get_logger(__name__)

CONFIG_KEYS = (
    "input_path",
    "template_path",
    "method",
    "alpha",
    "beta",
    "gamma",
    "batch_seconds",
    "k",
    "region__u_seconds",
    "region__e",
    "spring__epsilon",
    "fs_override",
    "apply_filter",
    "export_trace",
    "n_jobs",
    "output_dir",
)


def register(subparsers) -> None:
    parser = subparsers.add_parser("segment", help="Segment a record into cycles and annotate fiducials")
    parser.add_argument("--input", dest="input_path", help="Signal CSV (one sample per line, optional fs= header)")
    parser.add_argument("--template", dest="template_path", help="Prime template CSV with a .ann.csv sidecar")
    parser.add_argument("--method", choices=["boosted-st", "boosted-dt", "spring", "adaptive"])
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--beta", type=float)
    parser.add_argument("--gamma", type=float)
    parser.add_argument("--batch-seconds", dest="batch_seconds", type=float)
    parser.add_argument("--k", type=int, help="Maximum ensemble size (boosted-dt)")
    parser.add_argument("--region-seconds", dest="region__u_seconds", type=float, help="Ensemble update cadence")
    parser.add_argument("--dba-iterations", dest="region__e", type=int)
    parser.add_argument("--epsilon", dest="spring__epsilon", type=float, help="SpringDTW report threshold")
    parser.add_argument("--fs", dest="fs_override", type=float, help="Sampling rate, overrides the file header")
    parser.add_argument("--no-filter", dest="apply_filter", action="store_const", const=False)
    parser.add_argument("--no-trace", dest="export_trace", action="store_const", const=False)
    parser.add_argument("--n-jobs", dest="n_jobs", type=int)
    parser.add_argument("--output-dir", dest="output_dir")
    parser.set_defaults(handler=run, config_keys=CONFIG_KEYS)


def write_outputs(result: PipelineResult, config: RunConfig) -> Dict[str, str]:
    output_dir = Path(config.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    paths = {"events": output_dir / "events.csv"}
    write_events_csv(result.events, paths["events"])

    if config.method != "adaptive":
        paths["segments"] = output_dir / "segments.csv"
        result.segments_frame().to_csv(paths["segments"], index=False)
    if config.export_trace and result.traces:
        paths["trace"] = output_dir / "trace.csv"
        result.trace_frame().to_csv(paths["trace"], index=False)
    for template in result.templates:
        save_template(template, output_dir / "templates" / f"{template.id}.csv")
    if result.templates:
        paths["templates"] = output_dir / "templates"
    return {name: str(path) for name, path in paths.items()}


def run(config: RunConfig, args) -> Dict[str, Any]:
    if not config.input_path:
        raise ConfigurationError("an input signal is required (--input)", field="input_path")

    record = load_csv(config.input_path, fs_override=config.fs_override)
    prime = None
    if config.template_path:
        prime = load_template(config.template_path, fs_override=config.fs_override)
        if abs(prime.fs - record.fs) > 1e-9:
            raise InputError(
                f"template sampled at {prime.fs} Hz but the record at {record.fs} Hz",
                {"path": config.template_path},
            )
    elif config.method != "adaptive":
        logger.warning("No prime template given, bootstrapping one from the record")

    result = run_method(record, config, prime)
    files = write_outputs(result, config)
    counts = Counter(event.fiducial_class.value for event in result.events)
    for warning in result.warnings:
        logger.debug(f"Run warning: {warning}")
    logger.info(
        f"{config.method}: {len(result.events)} events, {len(result.segments)} segments, {len(result.warnings)} warnings",
        extra={"extra_fields": {"events": dict(counts)}},
    )
    return {
        "method": config.method,
        "files": files,
        "events": dict(counts),
        "segments": len(result.segments),
        "warnings": result.warnings,
    }
