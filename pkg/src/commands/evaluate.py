from typing import Any, Dict

from src.config import RunConfig
from src.errors import ConfigurationError
from src.evaluation import evaluate_events, write_report
from src.logging_config import get_logger
from src.schemas import read_events_csv

logger = get_logger(__name__)

CONFIG_KEYS = ("events_path", "truth_path", "tol_ms", "ibi_min_ms", "ibi_max_ms", "output_dir")


def register(subparsers) -> None:
    parser = subparsers.add_parser("evaluate", help="Score predicted events against ground truth")
    parser.add_argument("--events", dest="events_path", help="Predicted events CSV")
    parser.add_argument("--truth", dest="truth_path", help="Ground-truth CSV (class,sample_index,time_s)")
    parser.add_argument("--tol-ms", dest="tol_ms", type=float, help="Matching tolerance in milliseconds")
    parser.add_argument("--ibi-min-ms", dest="ibi_min_ms", type=float)
    parser.add_argument("--ibi-max-ms", dest="ibi_max_ms", type=float)
    parser.add_argument("--output-dir", dest="output_dir")
    parser.set_defaults(handler=run, config_keys=CONFIG_KEYS)


def run(config: RunConfig, args) -> Dict[str, Any]:
    for field in ("events_path", "truth_path"):
        if not getattr(config, field):
            raise ConfigurationError(f"{field} is required", field=field)

    pred = read_events_csv(config.events_path)
    truth = read_events_csv(config.truth_path)
    report, differences = evaluate_events(pred, truth, config.tol_ms, config.ibi_min_ms, config.ibi_max_ms)
    paths = write_report(report, differences, config.output_dir)

    summary = {name: {"f1": cls.f1, "ibi_mae_ms": cls.ibi_mae_ms} for name, cls in report.classes.items()}
    logger.info("Evaluation complete", extra={"extra_fields": summary})
    return {"files": {name: str(path) for name, path in paths.items()}, "classes": summary}
