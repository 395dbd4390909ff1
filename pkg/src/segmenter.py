"""Probabilistic endpoint detection.

Candidate endpoints are the local minima of the working signal. Each one is
scored by the product of a gradient heuristic (how steep the upstroke after it
is) and a morphology likelihood derived from the Spring distance between the
template and the best subsequence ending there. Segments are accepted inside an
alpha/beta window around the expected cycle length.
"""
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.signal import find_peaks
from scipy.signal.windows import hann

from src.dtw_core import WarpingPath, dtw_full, sakoe_chiba_width, spring_scan, traceback
from src.errors import DegenerateBatchError, InsufficientDataError, NoDominantFrequencyError, NoPathError
from src.logging_config import get_logger
from src.schemas import TRACE_COLUMNS
from src.signal_io import DerivedViews, SignalBatch

logger = get_logger(__name__)

ZERO_PAD_FACTOR = 4
NOISE_FLOOR_RATIO = 5.0


@dataclass(frozen=True)
class CycleLengthEstimate:
    l_x: float
    f_star: float
    batch_span: float


@dataclass(frozen=True)
class CandidateEndpoint:
    idx: int
    g_t: float
    p_c: float


@dataclass(frozen=True)
class EndpointRecord:
    idx: int
    d: float
    p_c: float
    p_d: float
    p_e: float
    log_score: float


@dataclass
class EndpointTrace:
    records: List[EndpointRecord] = field(default_factory=list)
    d_series: np.ndarray = field(default_factory=lambda: np.empty(0))
    offset: int = 0

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(
            [(r.idx + self.offset, r.d, r.p_c, r.p_d, r.p_e) for r in self.records],
            columns=TRACE_COLUMNS,
        )
        return frame


@dataclass(frozen=True, eq=False)
class Segment:
    """A detected cycle; ``t_s``/``t_e`` are record-level sample indices."""

    t_s: int
    t_e: int
    chosen_template_id: str
    path: WarpingPath
    p_e_at_end: float
    segment_id: int = 0

    @property
    def length(self) -> int:
        return self.t_e - self.t_s


def _parabolic(f: np.ndarray, x: int) -> float:
    denom = f[x - 1] - 2 * f[x] + f[x + 1]
    if denom == 0:
        return float(x)
    return 0.5 * (f[x - 1] - f[x + 1]) / denom + x


def estimate_cycle_length(batch: SignalBatch, fs: Optional[float] = None, f_band: Tuple[float, float] = (0.5, 3.0)):
    """
    Estimate the average cycle length from the dominant frequency of the batch.

    Args:
        batch: Working signal
        fs: Sampling rate, defaults to the batch's own
        f_band: Plausible cycle frequency range (Hz)

    Returns:
        CycleLengthEstimate with l_x = fs / f*
    """
    fs = batch.fs if fs is None else fs
    f_lo, f_hi = f_band
    span = batch.n / fs
    if span < 2.0 / f_lo:
        raise InsufficientDataError(
            f"batch spans {span:.2f} s, at least {2.0 / f_lo:.2f} s are needed for two cycles at {f_lo} Hz",
            {"span": span},
        )

    x = batch.samples - batch.samples.mean()
    n_fft = ZERO_PAD_FACTOR * x.size
    spectrum = np.abs(np.fft.rfft(x * hann(x.size, sym=False), n=n_fft))
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / fs)

    in_band = np.flatnonzero((freqs >= f_lo) & (freqs <= f_hi))
    if in_band.size < 3:
        raise InsufficientDataError("frequency band holds too few spectral bins")
    band = spectrum[in_band]
    peak = int(np.argmax(band))
    floor = float(np.median(band))
    if band[peak] <= 0 or band[peak] <= NOISE_FLOOR_RATIO * floor:
        raise NoDominantFrequencyError(
            f"no spectral peak above the noise floor inside [{f_lo}, {f_hi}] Hz",
            {"peak": float(band[peak]), "floor": floor},
        )

    bin_idx = int(in_band[peak])
    if 0 < bin_idx < spectrum.size - 1 and np.all(spectrum[bin_idx - 1 : bin_idx + 2] > 0):
        refined = _parabolic(np.log(spectrum), bin_idx)
    else:
        refined = float(bin_idx)
    f_star = refined * fs / n_fft
    f_star = min(max(f_star, f_lo), f_hi)

    estimate = CycleLengthEstimate(l_x=fs / f_star, f_star=f_star, batch_span=span)
    logger.debug(
        f"Dominant frequency {f_star:.4f} Hz, l_x = {estimate.l_x:.2f} samples",
        extra={"extra_fields": {"offset": batch.offset, "f_star": f_star}},
    )
    return estimate


def heuristic_likelihood(g_t: float, batch_min: float, batch_max: float) -> float:
    if batch_max <= batch_min:
        raise DegenerateBatchError("scaled derivative has no range", {"min": batch_min, "max": batch_max})
    return float(np.clip((g_t - batch_min) / (batch_max - batch_min), 0.0, 1.0))


def morphology_likelihood(d: float, gamma: float) -> float:
    return math.exp(-gamma * d)


def endpoint_probability(p_c: float, p_d: float) -> float:
    return p_c * p_d


def log_endpoint_score(p_c: float, d: float, gamma: float) -> float:
    """``log(p_c * exp(-gamma*d))``, finite even when the exponential underflows."""
    if p_c <= 0:
        return -math.inf
    return math.log(p_c) - gamma * d


def local_minima(x: np.ndarray) -> np.ndarray:
    """Indices strictly below both neighbours; a flat run counts once, at its last index."""
    _, props = find_peaks(-np.asarray(x, dtype=np.float64), plateau_size=1)
    return props["right_edges"].astype(np.int64)


def detect_candidates(batch: SignalBatch, views: DerivedViews) -> List[CandidateEndpoint]:
    if views.degenerate:
        raise DegenerateBatchError("cannot score candidates on a batch with a constant derivative")

    minima = local_minima(batch.samples)
    slope_peaks, _ = find_peaks(views.deriv_scaled)
    if minima.size == 0 or slope_peaks.size == 0:
        return []

    batch_min = float(views.deriv_scaled.min())
    batch_max = float(views.deriv_scaled.max())
    # deriv[idx] is the first rise after a minimum at idx
    following = np.searchsorted(slope_peaks, minima, side="left")

    candidates = []
    for idx, k in zip(minima, following):
        if k >= slope_peaks.size:
            continue
        g_t = float(views.deriv_scaled[slope_peaks[k]])
        candidates.append(CandidateEndpoint(int(idx), g_t, heuristic_likelihood(g_t, batch_min, batch_max)))
    logger.debug(f"{len(candidates)} candidate endpoints out of {minima.size} local minima")
    return candidates


def select_endpoint(records: Sequence[EndpointRecord]) -> Optional[EndpointRecord]:
    """Highest score wins; exact ties keep the earlier candidate."""
    best = None
    for record in records:
        if best is None or record.log_score > best.log_score:
            best = record
    return best


def align_segment(view: np.ndarray, template, t_s: int, t_e: int, band_fraction: float = 0.10) -> WarpingPath:
    """Banded DTW path of the cycle [t_s, t_e] (local indices) against the template, in local stream indices."""
    segment_view = view[t_s:t_e]
    segment_view = segment_view - segment_view.mean()
    template_view = template.view
    band = sakoe_chiba_width(segment_view.size, template_view.size, band_fraction)
    matrix = dtw_full(segment_view, template_view, band_width=band)
    return traceback(matrix).shifted(t_s)


def segment_stream(
    batch: SignalBatch,
    views: DerivedViews,
    template,
    l_x: float,
    alpha: float = 0.7,
    beta: float = 1.3,
    gamma: float = 5000.0,
    band_fraction: float = 0.10,
    candidates: Optional[List[CandidateEndpoint]] = None,
    first_segment_id: int = 0,
) -> Tuple[List[Segment], EndpointTrace]:
    """
    Run the alpha/beta endpoint search over one batch.

    The Spring column advances once per derivative sample; each candidate reads
    the accumulated distance of the best template match ending at it. Starting
    from the earliest candidate, a fresh anchor moves to a candidate before
    ``alpha * l_x`` with a steeper following upstroke (higher p_c) until none
    is left; the accepted endpoint is the best-scoring candidate
    in ``[alpha * l_x, beta * l_x]`` and becomes the next anchor. An empty window
    resets the anchor to the first candidate beyond ``beta * l_x``.

    Args:
        batch: Working signal
        views: Derived views of ``batch``
        template: Template to match
        l_x: Expected cycle length in samples
        alpha: Lower window bound as a fraction of l_x
        beta: Upper window bound as a fraction of l_x
        gamma: Morphology likelihood scale
        band_fraction: Sakoe-Chiba fraction for the per-segment alignment
        candidates: Precomputed candidates, detected from ``batch`` when omitted
        first_segment_id: Id given to the first emitted segment

    Returns:
        Segments in record-level indices and the endpoint trace
    """
    if not alpha < 1 < beta:
        raise ValueError(f"need alpha < 1 < beta, got alpha={alpha}, beta={beta}")
    if views.degenerate:
        raise DegenerateBatchError(
            "batch has a constant derivative and cannot be segmented", {"offset": batch.offset}
        )

    view = views.dtw_view
    scan = spring_scan(view, template.view)
    trace = EndpointTrace(d_series=scan.acc_last, offset=batch.offset)

    if candidates is None:
        candidates = detect_candidates(batch, views)
    if not candidates:
        logger.info("No candidate endpoints in batch", extra={"extra_fields": {"offset": batch.offset}})
        return [], trace

    # deriv[t] spans samples t..t+1, so a match ending at sample idx ends at deriv index idx-1
    records = []
    for c in candidates:
        d = float(scan.acc_last[c.idx - 1]) if c.idx >= 1 else math.inf
        p_d = morphology_likelihood(d, gamma) if math.isfinite(d) else 0.0
        p_e = endpoint_probability(c.p_c, p_d)
        records.append(EndpointRecord(c.idx, d, c.p_c, p_d, p_e, log_endpoint_score(c.p_c, d, gamma)))
    trace.records = records
    positions = np.array([r.idx for r in records])

    lo_len = alpha * l_x
    hi_len = beta * l_x
    segments: List[Segment] = []
    anchor = 0
    fresh = True
    while anchor < len(records):
        a_idx = positions[anchor]
        if fresh:
            # fresh anchor: move on gradient evidence alone
            early = [i for i in range(anchor + 1, len(records)) if positions[i] - a_idx < lo_len]
            if early:
                steepest = max(early, key=lambda i: (records[i].p_c, -i))
                if records[steepest].p_c > records[anchor].p_c:
                    anchor = steepest
                    continue

        window = [i for i in range(anchor + 1, len(records)) if lo_len <= positions[i] - a_idx <= hi_len]
        if not window:
            beyond = np.flatnonzero(positions - a_idx > hi_len)
            if beyond.size == 0:
                break
            logger.debug(
                f"Empty search window after sample {a_idx + batch.offset}, resetting",
                extra={"extra_fields": {"offset": batch.offset}},
            )
            anchor = int(beyond[0])
            fresh = True
            continue

        chosen = select_endpoint([records[i] for i in window])
        end = int(np.searchsorted(positions, chosen.idx))
        try:
            path = align_segment(view, template, int(a_idx), chosen.idx, band_fraction)
        except NoPathError as e:
            logger.warning(f"Alignment failed for segment [{a_idx}, {chosen.idx}]: {e}")
            anchor = end
            fresh = True
            continue

        segments.append(
            Segment(
                t_s=int(a_idx) + batch.offset,
                t_e=chosen.idx + batch.offset,
                chosen_template_id=template.id,
                path=path.shifted(batch.offset),
                p_e_at_end=chosen.p_e,
                segment_id=first_segment_id + len(segments),
            )
        )
        anchor = end
        fresh = False

    logger.debug(
        f"Segmented {len(segments)} cycles with template {template.id}",
        extra={"extra_fields": {"offset": batch.offset, "l_x": l_x, "template": template.id}},
    )
    return segments, trace
