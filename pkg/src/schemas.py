from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator

from src.errors import EmptyInputError, InputError, SchemaError
from src.logging_config import get_logger

logger = get_logger(__name__)

EVENT_COLUMNS = ["class", "sample_index", "time_s", "segment_id"]
TRUTH_COLUMNS = ["class", "sample_index", "time_s"]
SEGMENT_COLUMNS = ["segment_id", "t_s", "t_e", "template_id", "path_cost", "path_length", "p_e_at_end"]
TRACE_COLUMNS = ["sample_index", "d", "p_c", "p_d", "p_e"]


class FiducialClass(str, Enum):
    SYS = "Sys"
    MS = "MS"
    ONSET = "Onset"
    NF = "NF"


SCORED_CLASSES = (FiducialClass.SYS, FiducialClass.MS, FiducialClass.ONSET)


class FiducialEvent(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    fiducial_class: FiducialClass = Field(..., alias="class", description="Fiducial label")
    stream_idx: int = Field(..., ge=0, alias="sample_index", description="Record-level sample index")
    time_s: float = Field(..., ge=0, description="Seconds from the start of the record")
    segment_id: Optional[int] = Field(None, ge=0, description="Segment the event was mapped from")

    @field_validator("fiducial_class", mode="before")
    @classmethod
    def validate_class(cls, v):
        if isinstance(v, str):
            for member in FiducialClass:
                if v.strip().lower() in (member.value.lower(), member.name.lower()):
                    return member
            allowed = [member.value for member in FiducialClass]
            raise ValueError(f"class must be one of {allowed}, got '{v}'")
        return v


class ClassReport(BaseModel):
    fiducial_class: FiducialClass
    tp: int = Field(..., ge=0)
    fp: int = Field(..., ge=0)
    fn: int = Field(..., ge=0)
    precision: float = Field(..., ge=0, le=1)
    recall: float = Field(..., ge=0, le=1)
    f1: float = Field(..., ge=0, le=1)
    rmse_ms: Optional[float] = Field(None, ge=0)
    degenerate: List[str] = Field(default_factory=list, description="Metrics whose denominator was zero")

    ibi_pairs: int = Field(0, ge=0)
    ibi_unpaired: int = Field(0, ge=0)
    ibi_mae_ms: Optional[float] = Field(None, ge=0)
    ibi_mae_sem_ms: Optional[float] = Field(None, ge=0)
    ibi_mae_pct: Optional[float] = Field(None, ge=0)
    pearson_r: Optional[float] = Field(None, ge=-1, le=1)
    valid_prediction_count: int = Field(0, ge=0)
    valid_prediction_fraction: Optional[float] = Field(None, ge=0, le=1)


class EvalReport(BaseModel):
    tol_ms: float
    ibi_min_ms: float
    ibi_max_ms: float
    classes: Dict[str, ClassReport]

    def table_classification(self) -> pd.DataFrame:
        rows = [
            {
                "class": name,
                "precision": report.precision,
                "recall": report.recall,
                "f1": report.f1,
                "rmse_ms": report.rmse_ms,
                "tp": report.tp,
                "fp": report.fp,
                "fn": report.fn,
            }
            for name, report in self.classes.items()
        ]
        return pd.DataFrame(rows)

    def table_ibi(self) -> pd.DataFrame:
        rows = [
            {
                "class": name,
                "mae_ms": report.ibi_mae_ms,
                "mae_sem_ms": report.ibi_mae_sem_ms,
                "mae_pct": report.ibi_mae_pct,
                "pearson_r": report.pearson_r,
                "pairs": report.ibi_pairs,
                "valid_predictions": report.valid_prediction_count,
                "valid_fraction": report.valid_prediction_fraction,
            }
            for name, report in self.classes.items()
        ]
        return pd.DataFrame(rows)


def events_to_frame(events: Sequence[FiducialEvent]) -> pd.DataFrame:
    rows = [
        {
            "class": event.fiducial_class.value,
            "sample_index": event.stream_idx,
            "time_s": event.time_s,
            "segment_id": event.segment_id,
        }
        for event in events
    ]
    frame = pd.DataFrame(rows, columns=EVENT_COLUMNS)
    frame["segment_id"] = frame["segment_id"].astype("Int64")
    return frame


def events_from_frame(frame: pd.DataFrame, source: Optional[str] = None) -> List[FiducialEvent]:
    for column in TRUTH_COLUMNS:
        if column not in frame.columns:
            raise SchemaError(column, path=source)

    events = []
    has_segment = "segment_id" in frame.columns
    for row_number, record in enumerate(frame.to_dict("records"), start=2):
        segment_id = record.get("segment_id") if has_segment else None
        try:
            events.append(
                FiducialEvent(
                    fiducial_class=str(record["class"]),
                    stream_idx=int(record["sample_index"]),
                    time_s=float(record["time_s"]),
                    segment_id=None if segment_id is None or pd.isna(segment_id) else int(segment_id),
                )
            )
        except (ValueError, TypeError) as e:
            raise InputError(f"row {row_number}: {e}", {"path": source, "row": row_number}) from e
    return events


def read_events_csv(path: Union[str, Path]) -> List[FiducialEvent]:
    path = Path(path)
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError as e:
        raise InputError(f"events file not found: {path}", {"path": str(path)}) from e
    except pd.errors.EmptyDataError as e:
        raise EmptyInputError(f"{path} is empty", {"path": str(path)}) from e
    frame.columns = [column.strip() for column in frame.columns]
    events = events_from_frame(frame, source=str(path))
    logger.debug(f"Read {len(events)} events from {path}")
    return events


def write_events_csv(events: Sequence[FiducialEvent], path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    events_to_frame(events).to_csv(path, index=False)
    logger.debug(f"Wrote {len(events)} events to {path}")
