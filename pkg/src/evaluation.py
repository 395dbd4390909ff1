"""Scoring of predicted fiducials against ground truth: event matching, classification, timing error, IBI agreement."""
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats

from src.logging_config import get_logger
from src.schemas import SCORED_CLASSES, ClassReport, EvalReport, FiducialClass, FiducialEvent

logger = get_logger(__name__)

IBI_PAIRING_WINDOW_S = 1.0


@dataclass
class ClassMatch:
    tp: int
    fp: int
    fn: int
    matched_pairs: List[Tuple[float, float]] = field(default_factory=list)


@dataclass
class MatchResult:
    per_class: Dict[FiducialClass, ClassMatch]

    def __getitem__(self, cls: FiducialClass) -> ClassMatch:
        return self.per_class[cls]


@dataclass(frozen=True)
class Scores:
    precision: float
    recall: float
    f1: float
    degenerate: Tuple[str, ...] = ()


@dataclass(frozen=True, eq=False)
class IbiSeries:
    times: np.ndarray
    ibi_ms: np.ndarray
    source_class: Optional[FiducialClass] = None
    retained_fraction: float = 1.0

    def __len__(self) -> int:
        return self.ibi_ms.size


@dataclass(frozen=True, eq=False)
class IbiAgreement:
    mae_ms: Optional[float]
    mae_sem_ms: Optional[float]
    mae_pct: Optional[float]
    pearson_r: Optional[float]
    pairs: np.ndarray
    unpaired: int

    @property
    def n_pairs(self) -> int:
        return self.pairs.shape[0]


def _by_class(events: Sequence[FiducialEvent]) -> Dict[FiducialClass, np.ndarray]:
    grouped = defaultdict(list)
    for event in events:
        grouped[event.fiducial_class].append(event.time_s)
    return {cls: np.sort(np.asarray(times, dtype=np.float64)) for cls, times in grouped.items()}


def match_class(pred_times: np.ndarray, truth_times: np.ndarray, tol_ms: float) -> ClassMatch:
    """Greedy one-to-one matching, closest pairs first, within ``tol_ms``."""
    pred_times = np.sort(np.asarray(pred_times, dtype=np.float64))
    truth_times = np.sort(np.asarray(truth_times, dtype=np.float64))
    tol_s = tol_ms / 1000.0

    potential = []
    lo = np.searchsorted(truth_times, pred_times - tol_s, side="left")
    hi = np.searchsorted(truth_times, pred_times + tol_s, side="right")
    for p, (a, b) in enumerate(zip(lo, hi)):
        for t in range(a, b):
            distance = abs(pred_times[p] - truth_times[t])
            if distance <= tol_s:
                potential.append((distance, p, t))
    potential.sort()

    used_pred, used_truth = set(), set()
    pairs = []
    for _, p, t in potential:
        if p in used_pred or t in used_truth:
            continue
        used_pred.add(p)
        used_truth.add(t)
        pairs.append((float(pred_times[p]), float(truth_times[t])))
    pairs.sort()

    tp = len(pairs)
    return ClassMatch(tp=tp, fp=pred_times.size - tp, fn=truth_times.size - tp, matched_pairs=pairs)


def match_predictions(
    pred_events: Sequence[FiducialEvent],
    truth_events: Sequence[FiducialEvent],
    tol_ms: float = 100.0,
    classes: Sequence[FiducialClass] = SCORED_CLASSES,
) -> MatchResult:
    pred = _by_class(pred_events)
    truth = _by_class(truth_events)
    empty = np.empty(0)
    return MatchResult({cls: match_class(pred.get(cls, empty), truth.get(cls, empty), tol_ms) for cls in classes})


def classification_scores(match: ClassMatch) -> Scores:
    degenerate = []
    if match.tp + match.fp > 0:
        precision = match.tp / (match.tp + match.fp)
    else:
        precision = 0.0
        degenerate.append("precision")
    if match.tp + match.fn > 0:
        recall = match.tp / (match.tp + match.fn)
    else:
        recall = 0.0
        degenerate.append("recall")
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
        degenerate.append("f1")
    return Scores(precision, recall, f1, tuple(degenerate))


def timing_rmse(match: ClassMatch) -> Optional[float]:
    if not match.matched_pairs:
        return None
    pairs = np.asarray(match.matched_pairs)
    offsets_ms = 1000.0 * (pairs[:, 0] - pairs[:, 1])
    return float(np.sqrt(np.mean(offsets_ms**2)))


def compute_ibi(events_of_class: Sequence[FiducialEvent]) -> IbiSeries:
    if not events_of_class:
        return IbiSeries(np.empty(0), np.empty(0))
    source = events_of_class[0].fiducial_class
    times = np.sort(np.array([event.time_s for event in events_of_class], dtype=np.float64))
    if times.size < 2:
        return IbiSeries(np.empty(0), np.empty(0), source)
    return IbiSeries(times[1:], 1000.0 * np.diff(times), source)


def plausibility_filter(series: IbiSeries, min_ms: float = 600.0, max_ms: float = 1500.0) -> IbiSeries:
    if min_ms >= max_ms:
        raise ValueError(f"min_ms ({min_ms}) must be smaller than max_ms ({max_ms})")
    keep = (series.ibi_ms >= min_ms) & (series.ibi_ms <= max_ms)
    retained = float(keep.mean()) if keep.size else 0.0
    return IbiSeries(series.times[keep], series.ibi_ms[keep], series.source_class, retained)


def ibi_agreement(pred_series: IbiSeries, truth_series: IbiSeries, window_s: float = IBI_PAIRING_WINDOW_S) -> IbiAgreement:
    """
    Pair every truth IBI with the time-closest predicted IBI within ``window_s``.

    Returns:
        IbiAgreement with MAE, its standard error, MAE relative to the mean truth
        IBI, Pearson r and the (pred, truth) pairs; metrics are None without pairs
    """
    pairs = []
    unpaired = 0
    if len(pred_series):
        for t, truth_ibi in zip(truth_series.times, truth_series.ibi_ms):
            k = int(np.argmin(np.abs(pred_series.times - t)))
            if abs(pred_series.times[k] - t) <= window_s:
                pairs.append((pred_series.ibi_ms[k], truth_ibi))
            else:
                unpaired += 1
    else:
        unpaired = len(truth_series)

    pairs = np.asarray(pairs, dtype=np.float64).reshape(-1, 2)
    if pairs.shape[0] == 0:
        return IbiAgreement(None, None, None, None, pairs, unpaired)

    errors = np.abs(pairs[:, 0] - pairs[:, 1])
    mae = float(errors.mean())
    sem = float(stats.sem(errors)) if errors.size > 1 else None
    mae_pct = 100.0 * mae / float(pairs[:, 1].mean())

    pearson_r = None
    if pairs.shape[0] > 1 and np.ptp(pairs[:, 0]) > 0 and np.ptp(pairs[:, 1]) > 0:
        pearson_r = float(np.clip(stats.pearsonr(pairs[:, 0], pairs[:, 1])[0], -1.0, 1.0))
    return IbiAgreement(mae, sem, mae_pct, pearson_r, pairs, unpaired)


def difference_plot_data(pairs) -> pd.DataFrame:
    """Mean and (pred - truth) difference per (pred, truth) IBI pair."""
    pairs = np.asarray(pairs, dtype=np.float64).reshape(-1, 2)
    return pd.DataFrame(
        {
            "pred_ms": pairs[:, 0],
            "truth_ms": pairs[:, 1],
            "mean_ms": pairs.mean(axis=1),
            "difference_ms": pairs[:, 0] - pairs[:, 1],
        }
    )


def evaluate_events(
    pred_events: Sequence[FiducialEvent],
    truth_events: Sequence[FiducialEvent],
    tol_ms: float = 100.0,
    ibi_min_ms: float = 600.0,
    ibi_max_ms: float = 1500.0,
) -> Tuple[EvalReport, pd.DataFrame]:
    """
    Build the full evaluation report.

    Returns:
        The EvalReport and the difference-plot table of every class, with a
        ``class`` column
    """
    match = match_predictions(pred_events, truth_events, tol_ms)
    classes = {}
    differences = []
    for cls in SCORED_CLASSES:
        class_match = match[cls]
        scores = classification_scores(class_match)

        pred_ibi = compute_ibi([e for e in pred_events if e.fiducial_class == cls])
        truth_ibi = compute_ibi([e for e in truth_events if e.fiducial_class == cls])
        valid = plausibility_filter(pred_ibi, ibi_min_ms, ibi_max_ms)
        agreement = ibi_agreement(valid, truth_ibi)

        degenerate = list(scores.degenerate)
        if agreement.n_pairs == 0:
            degenerate.append("ibi")

        classes[cls.value] = ClassReport(
            fiducial_class=cls,
            tp=class_match.tp,
            fp=class_match.fp,
            fn=class_match.fn,
            precision=scores.precision,
            recall=scores.recall,
            f1=scores.f1,
            rmse_ms=timing_rmse(class_match),
            degenerate=degenerate,
            ibi_pairs=agreement.n_pairs,
            ibi_unpaired=agreement.unpaired,
            ibi_mae_ms=agreement.mae_ms,
            ibi_mae_sem_ms=agreement.mae_sem_ms,
            ibi_mae_pct=agreement.mae_pct,
            pearson_r=agreement.pearson_r,
            valid_prediction_count=len(valid),
            valid_prediction_fraction=valid.retained_fraction if len(pred_ibi) else None,
        )
        if degenerate:
            logger.warning(
                f"Degenerate metrics for {cls.value}: {degenerate}",
                extra={"extra_fields": {"class": cls.value, "degenerate": degenerate}},
            )

        frame = difference_plot_data(agreement.pairs)
        frame.insert(0, "class", cls.value)
        differences.append(frame)

    report = EvalReport(tol_ms=tol_ms, ibi_min_ms=ibi_min_ms, ibi_max_ms=ibi_max_ms, classes=classes)
    return report, pd.concat(differences, ignore_index=True)


def write_report(report: EvalReport, differences: pd.DataFrame, output_dir: Union[str, Path]) -> Dict[str, Path]:
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "report": output_dir / "eval_report.json",
        "classification": output_dir / "classification.csv",
        "ibi": output_dir / "ibi.csv",
        "difference": output_dir / "ibi_difference.csv",
    }
    paths["report"].write_text(report.model_dump_json(indent=2))
    report.table_classification().to_csv(paths["classification"], index=False)
    report.table_ibi().to_csv(paths["ibi"], index=False)
    differences.to_csv(paths["difference"], index=False)
    logger.info(f"Wrote evaluation report to {output_dir}")
    return paths
