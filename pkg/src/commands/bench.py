import time
from pathlib import Path
from typing import Any, Dict, List

import pandas as pd

from src.commands.synth import clean_waveform, template_from_truth
from src.config import RunConfig
from src.errors import PulseDTWError
from src.fiducial import Template
from src.logging_config import get_logger
from src.pipeline import BoostedSpringDTW, preprocess
from src.signal_io import synth_ppg
from src.template_manager import resample

logger = get_logger(__name__)

BENCH_COLUMNS = ["n", "m", "duration_s", "wall_time_s", "segments", "status"]
DEFAULT_DURATIONS = (30.0, 60.0, 120.0, 240.0)
CONFIG_KEYS = ("seed", "output_dir", "synth__hr_profile_bpm", "synth__fs", "n_jobs")


def register(subparsers) -> None:
    parser = subparsers.add_parser("bench", help="Time Boosted-SpringDTW against record and template length")
    parser.add_argument("--durations", nargs="+", type=float, default=list(DEFAULT_DURATIONS), help="Record lengths (s)")
    parser.add_argument(
        "--m-scales", nargs="*", type=float, default=[], help="Template length multipliers timed on the second duration"
    )
    parser.add_argument("--hr", dest="synth__hr_profile_bpm")
    parser.add_argument("--fs", dest="synth__fs", type=float)
    parser.add_argument("--seed", dest="seed", type=int)
    parser.add_argument("--n-jobs", dest="n_jobs", type=int, help="Threads for per-template analyses")
    parser.add_argument("--output-dir", dest="output_dir")
    parser.set_defaults(handler=run, config_keys=CONFIG_KEYS)


def scale_template(template: Template, factor: float) -> Template:
    new_len = max(3, int(round(factor * template.m)))
    ratio = (new_len - 1) / (template.m - 1)
    return Template(
        id=f"{template.id}x{factor:g}",
        samples=resample(template.samples, new_len),
        fs=template.fs,
        ann={cls: int(round(idx * ratio)) for cls, idx in template.ann.items()},
        provenance=template.provenance,
    )


def time_run(config: RunConfig, duration_s: float, template: Template) -> Dict[str, Any]:
    record, _ = synth_ppg(
        hr_profile_bpm=config.synth.hr_profile_bpm,
        fs=config.synth.fs,
        duration_s=duration_s,
        dicrotic_strength=config.synth.dicrotic_strength,
        seed=config.seed,
    )
    start = time.perf_counter()
    status = "ok"
    segments = 0
    try:
        segments = len(BoostedSpringDTW(template, config).run(preprocess(record, config)).segments)
    except PulseDTWError as e:
        status = type(e).__name__
    wall = time.perf_counter() - start
    return {
        "n": record.n,
        "m": template.m,
        "duration_s": duration_s,
        "wall_time_s": wall,
        "segments": segments,
        "status": status,
    }


def run(config: RunConfig, args) -> Dict[str, Any]:
    durations: List[float] = list(args.durations)
    _, base_truth = synth_ppg(
        hr_profile_bpm=config.synth.hr_profile_bpm, fs=config.synth.fs, duration_s=max(min(durations), 10.0), seed=config.seed
    )
    prime = template_from_truth(base_truth, waveform=clean_waveform(base_truth, config))

    logger.info("Warm-up run to compile the DTW kernels")
    time_run(config, min(durations), prime)

    rows = []
    for duration in durations:
        row = time_run(config, duration, prime)
        logger.info(
            f"n={row['n']} m={row['m']}: {row['wall_time_s']:.3f} s ({row['status']})",
            extra={"extra_fields": row},
        )
        rows.append(row)

    fixed = durations[1] if len(durations) > 1 else durations[0]
    for factor in args.m_scales:
        row = time_run(config, fixed, scale_template(prime, factor))
        logger.info(f"n={row['n']} m={row['m']}: {row['wall_time_s']:.3f} s ({row['status']})", extra={"extra_fields": row})
        rows.append(row)

    output_dir = Path(config.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    path = output_dir / "bench.csv"
    frame = pd.DataFrame(rows, columns=BENCH_COLUMNS)
    frame.to_csv(path, index=False)
    return {"file": str(path), "rows": frame.to_dict("records")}
