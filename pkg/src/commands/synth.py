from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from src.config import RunConfig
from src.errors import InsufficientDataError
from src.fiducial import Template, save_template
from src.logging_config import get_logger
from src.pipeline import preprocess
from src.signal_io import SignalBatch, SynthGroundTruth, save_csv, synth_ppg, write_truth_csv

logger = get_logger(__name__)

CONFIG_KEYS = (
    "synth__hr_profile_bpm",
    "synth__fs",
    "synth__duration_s",
    "synth__resp_mod_depth",
    "synth__dicrotic_strength",
    "synth__noise_sigma",
    "seed",
    "output_dir",
)


def register(subparsers) -> None:
    parser = subparsers.add_parser("synth", help="Generate a synthetic PPG record with fiducial ground truth")
    parser.add_argument("--hr", dest="synth__hr_profile_bpm", help="Heart rate in bpm, or a comma-separated profile")
    parser.add_argument("--fs", dest="synth__fs", type=float, help="Sampling rate (Hz)")
    parser.add_argument("--duration", dest="synth__duration_s", type=float, help="Record length (s)")
    parser.add_argument("--resp-depth", dest="synth__resp_mod_depth", type=float, help="Respiratory modulation depth")
    parser.add_argument("--dicrotic", dest="synth__dicrotic_strength", help="Dicrotic strength, or a comma-separated profile")
    parser.add_argument("--noise", dest="synth__noise_sigma", type=float, help="Noise sigma relative to peak-to-peak")
    parser.add_argument("--seed", dest="seed", type=int)
    parser.add_argument("--output-dir", dest="output_dir")
    parser.add_argument("--name", default="synth", help="Base name of the written files")
    parser.add_argument("--no-template", action="store_true", help="Do not export a prime template")
    parser.set_defaults(handler=run, config_keys=CONFIG_KEYS)


def template_from_truth(
    truth: SynthGroundTruth, cycle: int = 0, template_id: str = "prime", waveform: Optional[np.ndarray] = None
) -> Template:
    """
    Annotated template of one complete cycle.

    Samples are cut from ``waveform`` when given (the clean signal after the
    same preprocessing as the record), else from the noise-free waveform.
    Annotations are always the ground-truth indices.
    """
    if truth.sys_idx.size <= cycle:
        raise InsufficientDataError(f"synthetic record holds {truth.sys_idx.size} complete cycles, need {cycle + 1}")
    source = truth.clean if waveform is None else np.asarray(waveform, dtype=np.float64)
    a, b = int(truth.onset_idx[cycle]), int(truth.onset_idx[cycle + 1])
    return Template.from_cycle(
        source[a : b + 1],
        truth.fs,
        sys_idx=int(truth.sys_idx[cycle]) - a,
        ms_idx=int(truth.ms_idx[cycle]) - a,
        id=template_id,
        provenance="prime",
    )


def clean_waveform(truth: SynthGroundTruth, config: RunConfig) -> np.ndarray:
    """Noise-free signal passed through the preprocessing a segment run applies."""
    return preprocess(SignalBatch(truth.clean, truth.fs), config).samples


def run(config: RunConfig, args) -> Dict[str, Any]:
    synth = config.synth
    record, truth = synth_ppg(
        hr_profile_bpm=synth.hr_profile_bpm,
        fs=synth.fs,
        duration_s=synth.duration_s,
        resp_mod_depth=synth.resp_mod_depth,
        dicrotic_strength=synth.dicrotic_strength,
        noise_sigma=synth.noise_sigma,
        seed=config.seed,
    )

    output_dir = Path(config.output_dir)
    paths = {
        "record": output_dir / f"{args.name}.csv",
        "truth": output_dir / f"{args.name}.truth.csv",
    }
    save_csv(record, paths["record"])
    write_truth_csv(truth, paths["truth"])
    if not args.no_template:
        template = template_from_truth(truth, waveform=clean_waveform(truth, config))
        paths["template"] = save_template(template, output_dir / f"{args.name}.template.csv")

    logger.info(f"Wrote synthetic record with {truth.sys_idx.size} cycles to {paths['record']}")
    return {
        "files": {name: str(path) for name, path in paths.items()},
        "samples": record.n,
        "cycles": int(truth.sys_idx.size),
    }
