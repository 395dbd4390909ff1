"""Record-level orchestration: batching, method dispatch and ensemble bookkeeping."""
import math
from dataclasses import dataclass, field, replace
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from src.baselines import adaptive_threshold_detect, springdtw_segment
from src.config import RunConfig
from src.errors import DegenerateBatchError, EnsembleError, InsufficientDataError, NoDominantFrequencyError
from src.fiducial import Template, annotate_stream, dedupe_events
from src.logging_config import get_logger
from src.schemas import SEGMENT_COLUMNS, TRACE_COLUMNS, FiducialClass, FiducialEvent
from src.segmenter import EndpointTrace, Segment, detect_candidates, estimate_cycle_length, segment_stream
from src.signal_io import SignalBatch, bandpass_filter, derive_views
from src.template_manager import Ensemble, select_optimal, update_ensemble

logger = get_logger(__name__)


@dataclass
class PipelineResult:
    events: List[FiducialEvent] = field(default_factory=list)
    segments: List[Segment] = field(default_factory=list)
    traces: List[EndpointTrace] = field(default_factory=list)
    templates: List[Template] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    def segments_frame(self) -> pd.DataFrame:
        rows = [
            (s.segment_id, s.t_s, s.t_e, s.chosen_template_id, s.path.cost, len(s.path), s.p_e_at_end)
            for s in self.segments
        ]
        return pd.DataFrame(rows, columns=SEGMENT_COLUMNS)

    def trace_frame(self) -> pd.DataFrame:
        frames = [trace.to_frame() for trace in self.traces if trace.records]
        if not frames:
            return pd.DataFrame(columns=TRACE_COLUMNS)
        return pd.concat(frames, ignore_index=True)


@dataclass
class RegionAnalysis:
    template_id: str
    segments: List[Segment]
    trace: EndpointTrace

    @property
    def avg_path_cost(self) -> float:
        if not self.segments:
            return math.inf
        return float(np.mean([s.path.cost for s in self.segments]))


class BatchPlanner:
    """
    Iterate consecutive batches of a record.

    After handling a batch the caller may ``resume_at`` a record index inside it
    so the next batch re-reads the tail. A remainder shorter than
    ``min_seconds`` is merged into the batch before it.
    """

    def __init__(self, record: SignalBatch, batch_seconds: float, min_seconds: float = 0.0):
        self.record = record
        self.batch_len = max(2, int(round(batch_seconds * record.fs)))
        self.min_len = int(math.ceil(min_seconds * record.fs))
        self._start = 0
        self._next = 0
        self._stop = 0

    def resume_at(self, record_idx: int) -> None:
        if self._stop >= self.record.n:
            return
        if self._start < record_idx < self._stop:
            self._next = record_idx

    def __iter__(self) -> Iterator[SignalBatch]:
        n = self.record.n
        start = 0
        while start < n:
            stop = start + self.batch_len
            if n - stop < self.min_len:
                stop = n
            self._start, self._stop = start, stop
            self._next = stop
            yield self.record.slice(start, stop)
            if self._next <= start:
                break
            start = self._next


def split_batches(record: SignalBatch, batch_seconds: float, min_seconds: float = 0.0) -> List[SignalBatch]:
    return list(BatchPlanner(record, batch_seconds, min_seconds))


def preprocess(record: SignalBatch, config: RunConfig) -> SignalBatch:
    if not config.apply_filter:
        return record
    return bandpass_filter(record, config.filter_low_hz, config.filter_high_hz, config.filter_order)


def _min_batch_seconds(config: RunConfig) -> float:
    return 2.0 / config.f_band_low


def _renumber(segments: List[Segment], first_id: int) -> List[Segment]:
    return [replace(s, segment_id=first_id + i) for i, s in enumerate(segments)]


def _record_t0(batch: SignalBatch) -> float:
    return batch.t0 - batch.offset / batch.fs


class BoostedSpringDTW:
    """
    Boosted-SpringDTW with a single (``dynamic=False``) or self-updating template ensemble.

    Batches are analysed sequentially and every ensemble member analyses each
    batch independently; the member with the lowest average path cost supplies
    the batch's segments. Whole batches are grouped into regions of at least
    ``region_seconds``; when a region closes, its optimal template is counted
    and the ensemble update protocol runs on that template's cycles.
    """

    def __init__(self, prime: Template, config: RunConfig, dynamic: bool = False):
        self.config = config
        self.dynamic = dynamic
        self.ensemble = Ensemble.from_prime(prime, config.k if dynamic else 1)
        self.exported: List[Template] = []
        self._region_id = 0
        self._region_span = 0.0
        self._region_costs: Dict[str, List[float]] = {}
        self._region_cycles: Dict[str, List[np.ndarray]] = {}

    def _analyse(self, batch, views, template, l_x, candidates, first_id) -> RegionAnalysis:
        segments, trace = segment_stream(
            batch,
            views,
            template,
            l_x,
            alpha=self.config.alpha,
            beta=self.config.beta,
            gamma=self.config.gamma,
            band_fraction=self.config.band_fraction,
            candidates=candidates,
            first_segment_id=first_id,
        )
        return RegionAnalysis(template.id, segments, trace)

    def _analyse_all(self, batch, views, l_x, candidates, first_id) -> Dict[str, RegionAnalysis]:
        members = list(self.ensemble.members)
        if len(members) == 1 or self.config.n_jobs == 1:
            analyses = [self._analyse(batch, views, t, l_x, candidates, first_id) for t in members]
        else:
            analyses = Parallel(n_jobs=self.config.n_jobs, prefer="threads")(
                delayed(self._analyse)(batch, views, t, l_x, candidates, first_id) for t in members
            )
        return {analysis.template_id: analysis for analysis in analyses}

    @staticmethod
    def _cycles(batch: SignalBatch, segments: List[Segment]) -> List[np.ndarray]:
        return [batch.samples[s.t_s - batch.offset : s.t_e - batch.offset + 1] for s in segments]

    def _accumulate(self, batch: SignalBatch, analyses: Dict[str, RegionAnalysis]) -> None:
        self._region_span += batch.duration
        for tid, analysis in analyses.items():
            self._region_costs.setdefault(tid, []).extend(s.path.cost for s in analysis.segments)
            self._region_cycles.setdefault(tid, []).extend(self._cycles(batch, analysis.segments))

    def _close_region(self) -> Tuple[Optional[str], List[np.ndarray]]:
        costs = {
            tid: float(np.mean(values)) if values else math.inf
            for tid, values in self._region_costs.items()
            if tid in self.ensemble.ids
        }
        cycles = self._region_cycles
        self._region_span = 0.0
        self._region_costs, self._region_cycles = {}, {}
        self._region_id += 1

        self.ensemble.avg_path_cost = dict(costs)
        try:
            y_opt = select_optimal(self.ensemble, costs)
        except EnsembleError:
            return None, []
        self.ensemble.record_win(y_opt)
        logger.info(
            f"Region {self._region_id} closed, optimal template {y_opt}",
            extra={"extra_fields": {"region": self._region_id, "costs": costs, "usage": dict(self.ensemble.usage)}},
        )
        return y_opt, cycles.get(y_opt, [])

    def process_batch(self, batch: SignalBatch, first_id: int = 0) -> Tuple[RegionAnalysis, List[str]]:
        warnings: List[str] = []
        estimate = estimate_cycle_length(batch, f_band=(self.config.f_band_low, self.config.f_band_high))
        views = derive_views(batch)
        if views.degenerate:
            raise DegenerateBatchError("batch has a constant derivative", {"offset": batch.offset})
        candidates = detect_candidates(batch, views)

        analyses = self._analyse_all(batch, views, estimate.l_x, candidates, first_id)
        costs = {tid: analysis.avg_path_cost for tid, analysis in analyses.items()}
        try:
            best = select_optimal(self.ensemble, costs)
        except EnsembleError:
            warnings.append(f"No template produced segments in batch at {batch.t0:.1f} s")
            best = self.ensemble.prime_id
        chosen = analyses[best]
        logger.info(
            f"Batch at {batch.t0:.1f} s: {len(chosen.segments)} cycles with template {best}",
            extra={"extra_fields": {"offset": batch.offset, "l_x": estimate.l_x, "costs": costs}},
        )

        self._accumulate(batch, analyses)
        if self._region_span < self.config.region_seconds:
            return chosen, warnings

        y_opt, region_cycles = self._close_region()
        if y_opt is None:
            warnings.append(f"Region {self._region_id} produced no segments, ensemble unchanged")
            return chosen, warnings
        if not self.dynamic:
            return chosen, warnings

        update = update_ensemble(
            self.ensemble,
            region_cycles,
            y_opt,
            target_len=int(round(estimate.l_x)),
            e=self.config.region.e,
            region_id=self._region_id,
            band_fraction=self.config.band_fraction,
        )
        warnings.extend(update.warnings)
        self.ensemble = update.ensemble
        if update.added is not None:
            self.exported.append(update.added)
        if update.reanalyze:
            rerun = self._analyse(batch, views, update.added, estimate.l_x, candidates, first_id)
            if rerun.avg_path_cost < chosen.avg_path_cost:
                logger.info(
                    f"Re-analysis with {update.added.id} lowered the average path cost "
                    f"from {chosen.avg_path_cost:.4g} to {rerun.avg_path_cost:.4g}"
                )
                chosen = rerun
        return chosen, warnings

    def run(self, record: SignalBatch) -> PipelineResult:
        result = PipelineResult()
        planner = BatchPlanner(record, self.config.batch_seconds, _min_batch_seconds(self.config))
        for batch in planner:
            try:
                analysis, warnings = self.process_batch(batch, first_id=len(result.segments))
            except (InsufficientDataError, NoDominantFrequencyError, DegenerateBatchError) as e:
                message = f"Skipped batch at {batch.t0:.1f} s: {e}"
                logger.warning(message, extra={"extra_fields": {"offset": batch.offset}})
                result.warnings.append(message)
                continue
            result.warnings.extend(warnings)
            result.traces.append(analysis.trace)
            if analysis.segments:
                segments = _renumber(analysis.segments, len(result.segments))
                result.segments.extend(segments)
                planner.resume_at(segments[-1].t_e - 1 - record.offset)

        templates = {member.id: member for member in self.ensemble.members}
        templates.update({t.id: t for t in self.exported})
        mapping = annotate_stream(result.segments, templates, t0=_record_t0(record))
        result.events = dedupe_events(mapping.events)
        result.warnings.extend(f.message for f in mapping.failures)
        result.templates = list(self.exported)
        logger.info(
            f"Boosted-SpringDTW finished: {len(result.segments)} segments, {len(result.events)} events",
            extra={"extra_fields": {"dynamic": self.dynamic, "warnings": len(result.warnings)}},
        )
        return result


def run_spring(record: SignalBatch, prime: Template, config: RunConfig) -> PipelineResult:
    result = PipelineResult()
    events: List[FiducialEvent] = []
    epsilon = config.spring.epsilon
    for batch in split_batches(record, config.batch_seconds, _min_batch_seconds(config)):
        try:
            views = derive_views(batch)
        except InsufficientDataError as e:
            result.warnings.append(f"Skipped batch at {batch.t0:.1f} s: {e}")
            continue
        spring = springdtw_segment(
            batch,
            views,
            prime,
            epsilon=epsilon,
            warmup_factor=config.spring.warmup_factor,
            band_fraction=config.band_fraction,
            first_segment_id=len(result.segments),
        )
        # the first batch is the warm-up pass
        epsilon = spring.epsilon
        result.segments.extend(spring.segments)
        events.extend(spring.events)
        result.warnings.extend(f.message for f in spring.failures)

    result.events = dedupe_events(events)
    if not result.events:
        result.warnings.append(f"SpringDTW produced no events (epsilon={epsilon})")
    return result


def run_adaptive(record: SignalBatch, config: RunConfig) -> PipelineResult:
    result = PipelineResult()
    events: List[FiducialEvent] = []
    for batch in split_batches(record, config.batch_seconds, _min_batch_seconds(config)):
        try:
            views = derive_views(batch)
        except InsufficientDataError as e:
            result.warnings.append(f"Skipped batch at {batch.t0:.1f} s: {e}")
            continue
        events.extend(adaptive_threshold_detect(batch, views, batch.fs, config.threshold))
    result.events = dedupe_events(events)
    return result


def bootstrap_prime(record: SignalBatch, config: RunConfig) -> Template:
    """
    Build a prime template from the first plausible cycle the adaptive baseline finds.

    The annotations come from heuristics and should be confirmed offline.
    """
    head = record.slice(0, int(round(min(record.duration, config.batch_seconds) * record.fs)))
    events = adaptive_threshold_detect(head, derive_views(head), head.fs, config.threshold)
    by_class: Dict[FiducialClass, List[int]] = {cls: [] for cls in FiducialClass}
    for event in events:
        by_class[event.fiducial_class].append(event.stream_idx - head.offset)

    onsets = np.array(sorted(by_class[FiducialClass.ONSET]))
    min_len = record.fs * 60.0 / 180.0
    max_len = record.fs * 60.0 / 40.0
    for a, b in zip(onsets[:-1], onsets[1:]):
        if not min_len <= b - a <= max_len:
            continue
        sys_in = [i for i in by_class[FiducialClass.SYS] if a < i < b]
        ms_in = [i for i in by_class[FiducialClass.MS] if a < i < b]
        if len(sys_in) == 1 and len(ms_in) == 1 and ms_in[0] < sys_in[0]:
            template = Template.from_cycle(
                head.samples[a : b + 1], record.fs, sys_idx=sys_in[0] - a, ms_idx=ms_in[0] - a, provenance="bootstrap"
            )
            logger.warning(
                f"Bootstrapped prime template from cycle [{a}, {b}]; confirm its annotations before relying on results",
                extra={"extra_fields": {"sys": template.ann[FiducialClass.SYS], "ms": template.ann[FiducialClass.MS]}},
            )
            return template
    raise InsufficientDataError("no plausible cycle found to bootstrap a prime template")


def run_method(record: SignalBatch, config: RunConfig, prime: Optional[Template] = None) -> PipelineResult:
    """Preprocess ``record`` and run the configured method on it."""
    working = preprocess(record, config)
    if config.method == "adaptive":
        return run_adaptive(working, config)

    warnings = []
    if prime is None:
        prime = bootstrap_prime(working, config)
        warnings.append("prime template bootstrapped from the record; confirm its annotations offline")

    if config.method == "spring":
        result = run_spring(working, prime, config)
    else:
        result = BoostedSpringDTW(prime, config, dynamic=config.method == "boosted-dt").run(working)
    if prime.provenance == "bootstrap":
        result.templates.insert(0, prime)
    result.warnings[:0] = warnings
    return result
