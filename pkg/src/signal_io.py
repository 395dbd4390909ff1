"""Signal ingestion, preprocessing, derived views and the synthetic PPG generator."""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.signal import butter, sosfiltfilt
from scipy.special import ndtr
from sklearn.preprocessing import minmax_scale

from src.errors import ConfigurationError, EmptyInputError, InputError, InsufficientDataError, ParseError
from src.logging_config import get_logger

logger = get_logger(__name__)

FS_HEADER = "fs="

# synthetic beat shape, in units of the beat period
SYS_CENTER, SYS_WIDTH = 0.30, 0.10
DIC_CENTER, DIC_WIDTH = 0.62, 0.13
RUNOFF_START, RUNOFF_RAMP, RUNOFF_TAU, RUNOFF_LEVEL = 0.20, 0.05, 0.35, 0.4
RESP_HZ = 0.25
BEAT_SUPPORT = (-0.3, 6.0)


@dataclass(frozen=True, eq=False)
class SignalBatch:
    """A uniformly sampled scalar stream.

    ``t0`` is the time of the first sample and ``offset`` its index within the
    parent record, so child batches keep record-level coordinates.
    """

    samples: np.ndarray
    fs: float
    t0: float = 0.0
    offset: int = 0

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise InputError("signal batch must be a non-empty one-dimensional array")
        if not self.fs > 0:
            raise ConfigurationError(f"sampling rate must be positive, got {self.fs}", field="fs")
        if not np.all(np.isfinite(samples)):
            raise InputError("signal batch contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    @property
    def n(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.n / self.fs

    def slice(self, start: int, stop: int) -> "SignalBatch":
        start = max(0, start)
        stop = min(self.n, stop)
        return SignalBatch(self.samples[start:stop], self.fs, self.t0 + start / self.fs, self.offset + start)

    def time_of(self, global_idx: int) -> float:
        return self.t0 + (global_idx - self.offset) / self.fs


@dataclass(frozen=True, eq=False)
class DerivedViews:
    deriv: np.ndarray
    deriv_scaled: np.ndarray
    normalized: np.ndarray
    degenerate: bool = False

    @property
    def dtw_view(self) -> np.ndarray:
        """Mean-normalized first derivative, the form every DTW comparison uses."""
        return self.deriv - self.deriv.mean()


@dataclass(frozen=True, eq=False)
class SynthGroundTruth:
    sys_idx: np.ndarray
    ms_idx: np.ndarray
    onset_idx: np.ndarray
    ibi_ms: np.ndarray
    fs: float
    clean: np.ndarray = field(repr=False, default=None)

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for cls, indices in (("Onset", self.onset_idx), ("MS", self.ms_idx), ("Sys", self.sys_idx)):
            rows.extend((cls, int(i), i / self.fs) for i in indices)
        frame = pd.DataFrame(rows, columns=["class", "sample_index", "time_s"])
        return frame.sort_values(["time_s", "class"], kind="stable").reset_index(drop=True)


def _parse_sample(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return np.nan


def load_csv(path: Union[str, Path], fs_override: Optional[float] = None) -> SignalBatch:
    """
    Read a one-sample-per-line CSV with an optional ``fs=<value>`` header.

    Args:
        path: File to read
        fs_override: Sampling rate to use instead of (or in absence of) the header

    Returns:
        SignalBatch starting at t0 = 0
    """
    path = Path(path)
    logger.info(f"Loading signal from {path}")
    try:
        lines = path.read_text().splitlines()
    except OSError as e:
        raise InputError(f"cannot read {path}: {e}", {"path": str(path)}) from e

    header_fs = None
    first_data_line = 1
    if lines and lines[0].strip().lower().startswith(FS_HEADER):
        raw = lines[0].strip()[len(FS_HEADER) :]
        try:
            header_fs = float(raw)
        except ValueError:
            raise ParseError(f"invalid sampling rate '{raw}' in header", line=1, path=str(path))
        lines = lines[1:]
        first_data_line = 2

    values = pd.Series(lines, dtype=object).str.strip()
    line_numbers = np.arange(first_data_line, first_data_line + len(values))
    keep = (values != "").to_numpy()
    values = values[keep]
    line_numbers = line_numbers[keep]
    if values.empty:
        raise EmptyInputError(f"{path} contains no samples", {"path": str(path)})

    # float() round-trips the %.17g samples written by save_csv
    parsed = values.map(_parse_sample).to_numpy(dtype=np.float64)
    bad = ~np.isfinite(parsed)
    if bad.any():
        first_bad = int(np.argmax(bad))
        raise ParseError(
            f"cannot parse '{values.iloc[first_bad]}' as a finite number",
            line=int(line_numbers[first_bad]),
            path=str(path),
        )

    fs = fs_override if fs_override is not None else header_fs
    if fs is None:
        raise ConfigurationError(f"no sampling rate for {path}: add an 'fs=' header or pass fs_override", field="fs")

    batch = SignalBatch(parsed, float(fs))
    logger.info(
        f"Loaded {batch.n} samples at {batch.fs} Hz",
        extra={"extra_fields": {"path": str(path), "n": batch.n, "fs": batch.fs}},
    )
    return batch


def save_csv(batch: SignalBatch, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, batch.samples, fmt="%.17g", header=f"{FS_HEADER}{batch.fs:.17g}", comments="")
    logger.debug(f"Wrote {batch.n} samples to {path}")


def write_truth_csv(truth: SynthGroundTruth, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    truth.to_frame().to_csv(path, index=False)
    logger.debug(f"Wrote ground truth to {path}")


def bandpass_filter(batch: SignalBatch, low_hz: float = 0.5, high_hz: float = 5.0, order: int = 4) -> SignalBatch:
    """Zero-phase Butterworth bandpass; ``order`` is the total order of the band filter."""
    nyquist = batch.fs / 2
    if not 0 < low_hz < high_hz:
        raise ConfigurationError(f"bandpass needs 0 < low_hz < high_hz, got [{low_hz}, {high_hz}]", field="filter_low_hz")
    if high_hz >= nyquist:
        raise ConfigurationError(
            f"high cutoff {high_hz} Hz is at or above the Nyquist frequency {nyquist} Hz", field="filter_high_hz"
        )
    if order < 2 or order % 2:
        raise ConfigurationError(f"bandpass order must be even and >= 2, got {order}", field="filter_order")

    sos = butter(order // 2, [low_hz, high_hz], btype="bandpass", fs=batch.fs, output="sos")
    try:
        filtered = sosfiltfilt(sos, batch.samples)
    except ValueError as e:
        raise InsufficientDataError(f"{batch.n} samples are too few to filter: {e}") from e

    logger.debug(f"Bandpass [{low_hz}, {high_hz}] Hz order {order} applied to {batch.n} samples")
    return SignalBatch(filtered, batch.fs, batch.t0, batch.offset)


def derive_views(batch: SignalBatch) -> DerivedViews:
    if batch.n < 2:
        raise InsufficientDataError("derived views need at least two samples")

    deriv = np.diff(batch.samples)
    degenerate = bool(np.ptp(deriv) == 0)
    if degenerate:
        logger.warning(
            "Constant first derivative, scaled view set to zeros",
            extra={"extra_fields": {"offset": batch.offset, "n": batch.n}},
        )
        deriv_scaled = np.zeros_like(deriv)
    else:
        deriv_scaled = minmax_scale(deriv)

    normalized = batch.samples - batch.samples.mean()
    return DerivedViews(deriv=deriv, deriv_scaled=deriv_scaled, normalized=normalized, degenerate=degenerate)


def _profile(value: Union[float, Sequence[float]], t: np.ndarray, duration_s: float) -> np.ndarray:
    values = np.atleast_1d(np.asarray(value, dtype=np.float64))
    if values.size == 1:
        return np.full_like(t, values[0], dtype=np.float64)
    return np.interp(t, np.linspace(0.0, duration_s, values.size), values)


def _beat(u: np.ndarray, dicrotic: float) -> np.ndarray:
    systolic = np.exp(-0.5 * ((u - SYS_CENTER) / SYS_WIDTH) ** 2)
    diastolic = dicrotic * np.exp(-0.5 * ((u - DIC_CENTER) / DIC_WIDTH) ** 2)
    runoff = RUNOFF_LEVEL * ndtr((u - RUNOFF_START) / RUNOFF_RAMP) * np.exp(-np.clip(u - RUNOFF_START, 0, None) / RUNOFF_TAU)
    return systolic + diastolic + runoff


def synth_ppg(
    hr_profile_bpm: Union[float, Sequence[float]] = 72.0,
    fs: float = 300.0,
    duration_s: float = 60.0,
    resp_mod_depth: float = 0.0,
    dicrotic_strength: Union[float, Sequence[float]] = 0.3,
    noise_sigma: float = 0.0,
    seed: Optional[int] = None,
) -> Tuple[SignalBatch, SynthGroundTruth]:
    """
    Generate a two-bump synthetic PPG record with exact fiducial ground truth.

    Each beat is a systolic Gaussian, a dicrotic Gaussian and an exponential
    run-off. Fiducials are read off the noise-free waveform: the onset is the
    minimum between consecutive systolic apexes, MS the largest first difference
    within the cycle and Sys the cycle maximum.

    Args:
        hr_profile_bpm: Heart rate, constant or a sequence interpolated over the record
        fs: Sampling rate (Hz), at least 100
        duration_s: Record length in seconds
        resp_mod_depth: Respiratory modulation depth of amplitude (and a tenth of it on period)
        dicrotic_strength: Dicrotic bump height relative to the systolic one, constant or sequence
        noise_sigma: Gaussian noise sigma as a fraction of the clean peak-to-peak range
        seed: Seed for the noise generator

    Returns:
        Tuple of the noisy batch and its ground truth
    """
    hr = np.atleast_1d(np.asarray(hr_profile_bpm, dtype=np.float64))
    if hr.size == 0 or hr.min() < 40 or hr.max() > 180:
        raise ConfigurationError(f"hr_profile_bpm must lie within [40, 180] bpm, got {hr.tolist()}", field="hr_profile_bpm")
    if fs < 100:
        raise ConfigurationError(f"synthetic sampling rate must be at least 100 Hz, got {fs}", field="fs")
    if duration_s <= 0:
        raise ConfigurationError("duration_s must be positive", field="duration_s")

    n = int(round(duration_s * fs))
    # beats run past the end so the last partial cycle is shaped like the others
    horizon = duration_s + 3.0 * 60.0 / hr.min()

    period0 = 60.0 / hr[0]
    starts = [-0.75 * period0]
    periods = []
    while starts[-1] < horizon:
        s = starts[-1]
        resp = np.sin(2 * np.pi * RESP_HZ * s)
        period = 60.0 / _profile(hr, np.array([min(max(s, 0.0), duration_s)]), duration_s)[0]
        period *= 1 + 0.1 * resp_mod_depth * resp
        periods.append(period)
        starts.append(s + period)
    starts = np.array(starts[:-1])
    periods = np.array(periods)

    n_ext = int(np.ceil(horizon * fs)) + 1
    t = np.arange(n_ext) / fs
    clean = np.zeros(n_ext)
    dicrotic = _profile(dicrotic_strength, np.clip(starts, 0.0, duration_s), duration_s)
    amplitude = 1 + resp_mod_depth * np.sin(2 * np.pi * RESP_HZ * starts)
    for s, period, dic, amp in zip(starts, periods, dicrotic, amplitude):
        lo = max(0, int(np.floor((s + BEAT_SUPPORT[0] * period) * fs)))
        hi = min(n_ext, int(np.ceil((s + BEAT_SUPPORT[1] * period) * fs)) + 1)
        if hi <= lo:
            continue
        clean[lo:hi] += amp * _beat((t[lo:hi] - s) / period, dic)

    apexes = []
    for s, period in zip(starts, periods):
        if s + SYS_CENTER * period < 0:
            continue
        lo = int(np.floor(max(s, 0.0) * fs))
        hi = min(n_ext, int(np.ceil((s + period) * fs)))
        if hi - lo < 2:
            break
        apexes.append(lo + int(np.argmax(clean[lo:hi])))
    apexes = np.array(apexes)

    onsets = [int(np.argmin(clean[: apexes[0]]))]
    onsets.extend(a + int(np.argmin(clean[a:b])) for a, b in zip(apexes[:-1], apexes[1:]))
    onsets = np.array(onsets)

    # complete cycles only: both bounding onsets strictly inside the record
    complete = np.flatnonzero((onsets[:-1] >= 1) & (onsets[1:] <= n - 2))
    diff = np.diff(clean)
    sys_idx, ms_idx = [], []
    for c in complete:
        a, b = onsets[c], onsets[c + 1]
        sys_idx.append(a + int(np.argmax(clean[a:b])))
        ms_idx.append(a + int(np.argmax(diff[a:b])))
    onset_idx = np.append(onsets[complete], onsets[complete[-1] + 1]) if complete.size else np.array([], dtype=int)

    clean = clean[:n]
    rng = np.random.default_rng(seed)
    noisy = clean + noise_sigma * np.ptp(clean) * rng.standard_normal(n) if noise_sigma > 0 else clean.copy()

    truth = SynthGroundTruth(
        sys_idx=np.asarray(sys_idx, dtype=np.int64),
        ms_idx=np.asarray(ms_idx, dtype=np.int64),
        onset_idx=np.asarray(onset_idx, dtype=np.int64),
        ibi_ms=1000.0 * np.diff(onset_idx) / fs,
        fs=fs,
        clean=clean,
    )
    logger.info(
        f"Synthesised {duration_s:g} s at {fs:g} Hz with {truth.sys_idx.size} complete cycles",
        extra={"extra_fields": {"seed": seed, "noise_sigma": noise_sigma, "resp_mod_depth": resp_mod_depth}},
    )
    return SignalBatch(noisy, fs), truth
