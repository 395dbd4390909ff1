"""Templates and fiducial mapping through DTW warping paths."""
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from src.dtw_core import WarpingPath
from src.errors import InputError, MappingError, SchemaError
from src.logging_config import get_logger
from src.schemas import FiducialClass, FiducialEvent
from src.signal_io import SignalBatch, load_csv, save_csv

logger = get_logger(__name__)

REQUIRED_ANNOTATIONS = (FiducialClass.ONSET, FiducialClass.MS, FiducialClass.SYS)
MAPPED_CLASSES = (FiducialClass.MS, FiducialClass.SYS)


@dataclass(frozen=True, eq=False)
class Template:
    """An annotated exemplar cycle, onset to next onset."""

    id: str
    samples: np.ndarray
    fs: float
    ann: Mapping[FiducialClass, int]
    provenance: str = "prime"

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size < 3:
            raise InputError(f"template '{self.id}' needs at least three samples")
        ann = {FiducialClass(k): int(v) for k, v in self.ann.items()}
        for cls in REQUIRED_ANNOTATIONS:
            if cls not in ann:
                raise InputError(f"template '{self.id}' is missing the {cls.value} annotation")
            if not 0 <= ann[cls] < samples.size:
                raise InputError(f"template '{self.id}' {cls.value} index {ann[cls]} outside [0, {samples.size})")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "ann", ann)

    @property
    def m(self) -> int:
        return self.samples.size

    @cached_property
    def view(self) -> np.ndarray:
        deriv = np.diff(self.samples)
        return deriv - deriv.mean()

    @classmethod
    def from_cycle(
        cls,
        samples,
        fs: float,
        sys_idx: int,
        ms_idx: int,
        id: str = "prime",
        provenance: str = "prime",
        onset_idx: int = 0,
    ) -> "Template":
        return cls(
            id=id,
            samples=np.asarray(samples, dtype=np.float64),
            fs=fs,
            ann={FiducialClass.ONSET: onset_idx, FiducialClass.MS: ms_idx, FiducialClass.SYS: sys_idx},
            provenance=provenance,
        )


@dataclass
class FiducialMapping:
    events: List[FiducialEvent] = field(default_factory=list)
    failures: List[MappingError] = field(default_factory=list)


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".ann.csv")


def save_template(template: Template, path: Union[str, Path]) -> Path:
    path = Path(path)
    save_csv(SignalBatch(template.samples, template.fs), path)
    ann = pd.DataFrame(
        [(cls.value, idx) for cls, idx in template.ann.items()],
        columns=["class", "index"],
    )
    ann.to_csv(_sidecar(path), index=False)
    logger.info(f"Exported template {template.id} ({template.provenance}) to {path}")
    return path


def load_template(path: Union[str, Path], template_id: str = "prime", fs_override: Optional[float] = None) -> Template:
    path = Path(path)
    batch = load_csv(path, fs_override=fs_override)
    sidecar = _sidecar(path)
    if not sidecar.exists():
        raise InputError(f"annotation sidecar not found: {sidecar}", {"path": str(sidecar)})

    ann_frame = pd.read_csv(sidecar)
    for column in ("class", "index"):
        if column not in ann_frame.columns:
            raise SchemaError(column, path=str(sidecar))
    try:
        ann = {FiducialClass(str(row["class"]).strip()): int(row["index"]) for row in ann_frame.to_dict("records")}
    except ValueError as e:
        raise InputError(f"invalid annotation in {sidecar}: {e}", {"path": str(sidecar)}) from e

    template = Template(id=template_id, samples=batch.samples, fs=batch.fs, ann=ann, provenance="prime")
    logger.info(f"Loaded template {template_id} with {template.m} samples from {path}")
    return template


def resolve_index(path: WarpingPath, template_index: int) -> Optional[int]:
    """Stream index paired with ``template_index`` at minimum pairwise distance, earliest on ties."""
    hits = np.flatnonzero(path.pairs[:, 1] == template_index)
    if hits.size == 0:
        return None
    best = hits[np.argmin(path.local_costs[hits])]
    return int(path.pairs[best, 0])


def map_fiducials(segment, template: Template, path: Optional[WarpingPath] = None, t0: float = 0.0) -> FiducialMapping:
    """
    Map the template's annotations onto one segment.

    Paths align derivative views, whose last index is ``m - 2``, so annotations
    on the final template sample are mapped through the last derivative index.

    Args:
        segment: Detected cycle with record-level t_s/t_e
        template: Template the path was computed against
        path: Warping path in record-level stream indices (default: segment.path)
        t0: Record start time in seconds

    Returns:
        FiducialMapping with the events and per-class failures
    """
    path = segment.path if path is None else path
    fs = template.fs
    result = FiducialMapping()

    for idx in (segment.t_s, segment.t_e):
        result.events.append(
            FiducialEvent(
                fiducial_class=FiducialClass.ONSET, stream_idx=idx, time_s=t0 + idx / fs, segment_id=segment.segment_id
            )
        )

    last = template.view.size - 1
    for cls in MAPPED_CLASSES:
        stream_idx = resolve_index(path, min(template.ann[cls], last))
        if stream_idx is None:
            result.failures.append(
                MappingError(f"{cls.value} index {template.ann[cls]} of template {template.id} is not on the path", cls.value)
            )
            continue
        result.events.append(
            FiducialEvent(
                fiducial_class=cls, stream_idx=stream_idx, time_s=t0 + stream_idx / fs, segment_id=segment.segment_id
            )
        )
    return result


def dedupe_events(events: Iterable[FiducialEvent]) -> List[FiducialEvent]:
    """Time-sort events and keep one event per (class, sample index)."""
    seen = set()
    unique = []
    for event in sorted(events, key=lambda e: (e.stream_idx, e.fiducial_class.value)):
        key = (event.fiducial_class, event.stream_idx)
        if key in seen:
            continue
        seen.add(key)
        unique.append(event)
    return unique


def annotate_stream(
    segments: Sequence,
    templates: Mapping[str, Template],
    paths: Optional[Sequence[WarpingPath]] = None,
    t0: float = 0.0,
) -> FiducialMapping:
    if paths is not None and len(paths) != len(segments):
        raise ValueError(f"got {len(paths)} paths for {len(segments)} segments")

    events: List[FiducialEvent] = []
    failures: List[MappingError] = []
    for i, segment in enumerate(segments):
        template = templates[segment.chosen_template_id]
        mapping = map_fiducials(segment, template, paths[i] if paths is not None else None, t0=t0)
        events.extend(mapping.events)
        for failure in mapping.failures:
            logger.warning(
                f"Segment {segment.segment_id}: {failure.message}",
                extra={"extra_fields": {"segment_id": segment.segment_id, "class": failure.fiducial_class}},
            )
        failures.extend(mapping.failures)

    return FiducialMapping(events=dedupe_events(events), failures=failures)
