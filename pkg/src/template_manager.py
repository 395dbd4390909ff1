"""Template ensemble: DBA consensus, automatic labelling, selection and LFU replacement."""
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from src.dtw_core import dtw_full, sakoe_chiba_width, traceback
from src.errors import EnsembleError, InsufficientDataError, LabelingError, NoPathError
from src.fiducial import MAPPED_CLASSES, Template, resolve_index
from src.logging_config import get_logger
from src.schemas import FiducialClass

logger = get_logger(__name__)

MEDOID_CANDIDATES = 50
CONVERGENCE_TOL = 1e-6
SMOOTHING_POINTS = 5


@dataclass(frozen=True, eq=False)
class ConsensusResult:
    sequence: np.ndarray
    objective_history: List[float]
    degenerate: bool = False


@dataclass
class Ensemble:
    k: int
    members: List[Template]
    usage: Dict[str, int]
    avg_path_cost: Dict[str, float]
    prime_id: str
    generated: int = 0

    @classmethod
    def from_prime(cls, prime: Template, k: int = 3) -> "Ensemble":
        if k < 1:
            raise EnsembleError(f"ensemble size must be at least 1, got {k}")
        return cls(k=k, members=[prime], usage={prime.id: 0}, avg_path_cost={}, prime_id=prime.id)

    @property
    def prime(self) -> Template:
        return self.get(self.prime_id)

    @property
    def ids(self) -> List[str]:
        return [member.id for member in self.members]

    def get(self, template_id: str) -> Template:
        for member in self.members:
            if member.id == template_id:
                return member
        raise EnsembleError(f"template '{template_id}' is not in the ensemble")

    def record_win(self, template_id: str) -> None:
        self.get(template_id)
        self.usage[template_id] = self.usage.get(template_id, 0) + 1

    def copy(self) -> "Ensemble":
        return replace(self, members=list(self.members), usage=dict(self.usage), avg_path_cost=dict(self.avg_path_cost))


@dataclass
class EnsembleUpdate:
    ensemble: Ensemble
    added: Optional[Template] = None
    evicted: Optional[str] = None
    reanalyze: bool = False
    warnings: List[str] = field(default_factory=list)


def resample(seq, new_len: int) -> np.ndarray:
    if new_len < 2:
        raise ValueError(f"resample length must be at least 2, got {new_len}")
    seq = np.asarray(seq, dtype=np.float64)
    if seq.size == new_len:
        return seq.copy()
    return np.interp(np.linspace(0, seq.size - 1, new_len), np.arange(seq.size), seq)


def smooth(seq: np.ndarray, points: int = SMOOTHING_POINTS) -> np.ndarray:
    return pd.Series(seq).rolling(points, center=True, min_periods=1).mean().to_numpy()


def _squared_cost(a: np.ndarray, b: np.ndarray) -> float:
    return dtw_full(a, b, squared=True).final_cost


def _medoid(cycles: Sequence[np.ndarray]) -> int:
    if len(cycles) <= MEDOID_CANDIDATES:
        candidates = range(len(cycles))
    else:
        candidates = np.linspace(0, len(cycles) - 1, MEDOID_CANDIDATES).astype(int)

    best_idx, best_ss = -1, np.inf
    for idx in candidates:
        ss = sum(_squared_cost(cycles[idx], other) for other in cycles)
        if ss < best_ss:
            best_idx, best_ss = int(idx), ss
    return best_idx


def _align_all(average: np.ndarray, cycles: Sequence[np.ndarray]):
    sums = np.zeros_like(average)
    counts = np.zeros(average.size, dtype=np.int64)
    objective = 0.0
    for cycle in cycles:
        matrix = dtw_full(average, cycle, squared=True)
        path = traceback(matrix)
        objective += path.cost
        np.add.at(sums, path.pairs[:, 0], cycle[path.pairs[:, 1]])
        np.add.at(counts, path.pairs[:, 0], 1)
    return objective, sums, counts


def dba_consensus(cycles: Sequence, target_len: int, e: int = 10) -> ConsensusResult:
    """
    DTW barycenter averaging under the squared pairwise cost.

    Starts from the medoid (minimum summed DTW cost to the set) resampled to
    ``target_len`` and alternates alignment and per-sample averaging for at
    most ``e`` updates, stopping early once the summed cost improves by less
    than 1e-6 relatively.
    """
    cycles = [np.asarray(c, dtype=np.float64) for c in cycles]
    if not cycles:
        raise InsufficientDataError("DBA needs at least one cycle")
    if e < 1:
        raise ValueError(f"iteration cap must be at least 1, got {e}")
    if len(cycles) == 1:
        logger.warning("DBA called with a single cycle, returning it resampled")
        return ConsensusResult(resample(cycles[0], target_len), [], degenerate=True)

    average = resample(cycles[_medoid(cycles)], target_len)
    objective, sums, counts = _align_all(average, cycles)
    history = [objective]
    for iteration in range(e):
        average = sums / counts
        new_objective, sums, counts = _align_all(average, cycles)
        history.append(new_objective)
        if objective - new_objective <= CONVERGENCE_TOL * objective:
            logger.debug(f"DBA converged after {iteration + 1} updates")
            break
        objective = new_objective

    return ConsensusResult(average, history)


def label_template(
    prime: Template,
    new_seq,
    new_len: int,
    template_id: str = "generated",
    provenance: str = "generated",
    band_fraction: float = 0.10,
) -> Template:
    """Annotate a new sequence by aligning it with the prime template resampled to the same length."""
    new_seq = np.asarray(new_seq, dtype=np.float64)
    if new_seq.size != new_len:
        raise LabelingError(f"sequence has {new_seq.size} samples, expected {new_len}")

    scale = (new_len - 1) / (prime.m - 1)
    reference = Template(
        id=f"{prime.id}@{new_len}",
        samples=resample(prime.samples, new_len),
        fs=prime.fs,
        ann={cls: int(round(idx * scale)) for cls, idx in prime.ann.items()},
        provenance=prime.provenance,
    )
    candidate_view = np.diff(new_seq)
    candidate_view = candidate_view - candidate_view.mean()

    try:
        band = sakoe_chiba_width(candidate_view.size, reference.view.size, band_fraction)
        path = traceback(dtw_full(candidate_view, reference.view, band_width=band))
    except NoPathError as e:
        raise LabelingError(f"cannot align {template_id} with the prime template: {e}") from e

    last = reference.view.size - 1
    ann = {FiducialClass.ONSET: 0}
    for cls in MAPPED_CLASSES:
        idx = resolve_index(path, min(reference.ann[cls], last))
        if idx is None:
            raise LabelingError(f"{cls.value} could not be mapped onto {template_id}")
        ann[cls] = idx

    return Template(id=template_id, samples=new_seq, fs=prime.fs, ann=ann, provenance=provenance)


def generate_template(
    prime: Template,
    cycles: Sequence,
    target_len: int,
    e: int = 10,
    template_id: str = "generated",
    region_id: int = 0,
    band_fraction: float = 0.10,
) -> Template:
    consensus = dba_consensus(cycles, target_len, e)
    smoothed = smooth(consensus.sequence)
    template = label_template(
        prime, smoothed, target_len, template_id=template_id, provenance=f"generated({region_id})", band_fraction=band_fraction
    )
    logger.info(
        f"Generated template {template_id} from {len(cycles)} cycles",
        extra={
            "extra_fields": {
                "template": template_id,
                "region": region_id,
                "length": target_len,
                "dba_updates": max(0, len(consensus.objective_history) - 1),
            }
        },
    )
    return template


def select_optimal(ensemble: Ensemble, region_results: Mapping[str, float]) -> str:
    """Member with the lowest average path cost; the prime wins ties, then the lowest id."""
    members = set(ensemble.ids)
    scored = [
        (cost, template_id != ensemble.prime_id, template_id)
        for template_id, cost in region_results.items()
        if template_id in members and cost is not None and np.isfinite(cost)
    ]
    if not scored:
        raise EnsembleError("no template completed an analysis of the region")
    return min(scored)[2]


def _least_frequently_used(ensemble: Ensemble) -> str:
    order = {template_id: i for i, template_id in enumerate(ensemble.ids)}
    candidates = [tid for tid in ensemble.ids if tid != ensemble.prime_id]
    return min(candidates, key=lambda tid: (ensemble.usage.get(tid, 0), order[tid]))


def update_ensemble(
    ensemble: Ensemble,
    region_cycles: Sequence,
    y_opt: str,
    target_len: int,
    e: int = 10,
    region_id: int = 0,
    band_fraction: float = 0.10,
) -> EnsembleUpdate:
    """
    Apply the growth / replacement protocol after a region has been analysed.

    Below capacity a new consensus template is always added. At capacity a
    replacement happens only when a generated member won the region: the least
    frequently used generated member is evicted and the caller is asked to
    re-analyse the region with the newcomer. The prime is never evicted.
    """
    full = len(ensemble.members) >= ensemble.k
    if full and y_opt == ensemble.prime_id:
        logger.debug(f"Prime template won region {region_id}, ensemble unchanged")
        return EnsembleUpdate(ensemble)
    if full and ensemble.k == 1:
        return EnsembleUpdate(ensemble)

    template_id = f"gen{ensemble.generated + 1}"
    try:
        new_template = generate_template(
            ensemble.prime,
            region_cycles,
            target_len,
            e,
            template_id=template_id,
            region_id=region_id,
            band_fraction=band_fraction,
        )
    except (LabelingError, InsufficientDataError, ValueError) as exc:
        message = f"Template generation for region {region_id} rejected: {exc}"
        logger.warning(message, extra={"extra_fields": {"region": region_id}})
        return EnsembleUpdate(ensemble, warnings=[message])

    updated = ensemble.copy()
    updated.generated += 1
    evicted = None
    if full:
        evicted = _least_frequently_used(updated)
        updated.members = [member for member in updated.members if member.id != evicted]
        updated.usage.pop(evicted, None)
        updated.avg_path_cost.pop(evicted, None)
    updated.members.append(new_template)
    updated.usage[new_template.id] = 0

    logger.info(
        f"Ensemble updated: added {new_template.id}" + (f", evicted {evicted}" if evicted else ""),
        extra={"extra_fields": {"region": region_id, "members": updated.ids, "y_opt": y_opt}},
    )
    return EnsembleUpdate(updated, added=new_template, evicted=evicted, reanalyze=full)
