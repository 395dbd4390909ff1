"""Comparison methods: plain SpringDTW subsequence matching and adaptive thresholding."""
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.signal import find_peaks

from src.config import ThresholdConfig
from src.dtw_core import spring_scan
from src.errors import InsufficientDataError, MappingError, NoDominantFrequencyError, NoPathError
from src.fiducial import Template, dedupe_events, map_fiducials
from src.logging_config import get_logger
from src.schemas import FiducialClass, FiducialEvent
from src.segmenter import Segment, align_segment, estimate_cycle_length
from src.signal_io import DerivedViews, SignalBatch

logger = get_logger(__name__)


@dataclass
class SpringResult:
    segments: List[Segment]
    events: List[FiducialEvent]
    epsilon: float
    failures: List[MappingError] = field(default_factory=list)


def calibrate_epsilon(acc_last: np.ndarray, factor: float = 0.5) -> float:
    """Report threshold from a warm-up pass: ``factor`` times the median of ``acc[m-1]``."""
    finite = acc_last[np.isfinite(acc_last)]
    if finite.size == 0:
        raise InsufficientDataError("warm-up pass produced no finite Spring distances")
    return float(factor * np.median(finite))


def spring_report_points(acc_last: np.ndarray, epsilon: float) -> np.ndarray:
    """Times where ``acc[m-1]`` is at most epsilon and a local minimum in t."""
    prev = np.concatenate(([np.inf], acc_last[:-1]))
    nxt = np.concatenate((acc_last[1:], [np.inf]))
    hits = (acc_last <= epsilon) & (acc_last < prev) & (acc_last <= nxt)
    return np.flatnonzero(hits)


def springdtw_segment(
    batch: SignalBatch,
    views: DerivedViews,
    template: Template,
    epsilon: Optional[float] = None,
    warmup_factor: float = 0.5,
    band_fraction: float = 0.10,
    first_segment_id: int = 0,
) -> SpringResult:
    """
    Threshold-based Spring matching.

    A subsequence is reported wherever the running distance of the best match
    ending at t dips to a local minimum at or below ``epsilon``. Fiducials are
    mapped through the same banded alignment as the main pipeline.
    """
    view = views.dtw_view
    scan = spring_scan(view, template.view)
    if epsilon is None:
        epsilon = calibrate_epsilon(scan.acc_last, warmup_factor)
        logger.info(f"Calibrated Spring epsilon to {epsilon:.6g}", extra={"extra_fields": {"offset": batch.offset}})

    segments: List[Segment] = []
    events: List[FiducialEvent] = []
    failures: List[MappingError] = []
    for t in spring_report_points(scan.acc_last, epsilon):
        # deriv index t closes the cycle at sample t + 1
        t_s, t_e = int(scan.start_last[t]), int(t) + 1
        if t_e - t_s < 2:
            continue
        try:
            path = align_segment(view, template, t_s, t_e, band_fraction)
        except NoPathError as e:
            logger.warning(f"Spring match [{t_s}, {t_e}] could not be aligned: {e}")
            continue
        segment = Segment(
            t_s=t_s + batch.offset,
            t_e=t_e + batch.offset,
            chosen_template_id=template.id,
            path=path.shifted(batch.offset),
            p_e_at_end=float("nan"),
            segment_id=first_segment_id + len(segments),
        )
        segments.append(segment)
        mapping = map_fiducials(segment, template, t0=batch.t0 - batch.offset / batch.fs)
        events.extend(mapping.events)
        failures.extend(mapping.failures)

    if not segments:
        logger.warning(
            f"SpringDTW reported no subsequences at epsilon={epsilon:.6g}", extra={"extra_fields": {"offset": batch.offset}}
        )
    return SpringResult(segments, dedupe_events(events), epsilon, failures)


def adaptive_threshold_detect(
    batch: SignalBatch,
    views: DerivedViews,
    fs: Optional[float] = None,
    config: Optional[ThresholdConfig] = None,
    l_x: Optional[float] = None,
) -> List[FiducialEvent]:
    """
    Amplitude and spacing heuristics for Sys, MS and Onset.

    A peak is accepted when its prominence exceeds ``peak_fraction`` of the
    mean prominence of recently accepted peaks, scaled down exponentially with
    the time since the last beat, and when it lies beyond the refractory
    spacing. The onset is the lowest sample in the window before the peak and
    MS the steepest rise between onset and peak.
    """
    fs = batch.fs if fs is None else fs
    config = config or ThresholdConfig()
    x = batch.samples
    if views.degenerate or np.ptp(x) == 0:
        return []

    if l_x is None:
        try:
            l_x = estimate_cycle_length(batch, fs).l_x
        except (InsufficientDataError, NoDominantFrequencyError) as e:
            logger.warning(f"Falling back to a 1 s cycle length for adaptive thresholding: {e}")
            l_x = fs
    cycle = float(l_x)

    peaks, props = find_peaks(x, prominence=0)
    if peaks.size == 0:
        return []
    prominences = props["prominences"]

    startup = peaks < peaks[0] + 3 * cycle
    recent = [float(prominences[startup].max())]
    window = max(int(round(config.slope_window_s * fs)), 1)

    t_base = batch.t0 - batch.offset / fs
    accepted: List[int] = []
    events: List[FiducialEvent] = []
    for peak, prominence in zip(peaks, prominences):
        last = accepted[-1] if accepted else None
        if last is not None and peak - last < config.refractory_fraction * cycle:
            continue
        elapsed = 0.0 if last is None else (peak - last) / cycle
        threshold = config.peak_fraction * np.mean(recent) * np.exp(-elapsed / config.decay_cycles)
        if prominence < threshold:
            continue

        lo = max(0 if last is None else last, int(peak) - max(window, int(round(0.5 * cycle))))
        onset = lo + int(np.argmin(x[lo : peak + 1]))
        if onset >= peak:
            continue
        ms = onset + int(np.argmax(views.deriv[onset:peak]))

        if last is not None:
            interval = peak - last
            if 0.5 * cycle <= interval <= 1.5 * cycle:
                cycle = 0.8 * cycle + 0.2 * interval
        accepted.append(int(peak))
        recent = (recent + [float(prominence)])[-config.envelope_beats :]

        for cls, idx in ((FiducialClass.ONSET, onset), (FiducialClass.MS, ms), (FiducialClass.SYS, int(peak))):
            g = idx + batch.offset
            events.append(FiducialEvent(fiducial_class=cls, stream_idx=g, time_s=t_base + g / fs))

    logger.debug(
        f"Adaptive threshold accepted {len(accepted)} of {peaks.size} peaks",
        extra={"extra_fields": {"offset": batch.offset, "cycle": cycle}},
    )
    return dedupe_events(events)
