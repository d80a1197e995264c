"""Immutable domain types shared by every pipeline stage.

All types are frozen dataclasses (or named tuples) validated on
construction: once built, a value is safe to share across threads and
compares structurally. Times are real seconds; candidate ranks are
1-based positions (rank 1 = best).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

from .errors import (
    EmptyCandidateListError,
    EmptyListError,
    InvalidRankError,
    InvertedIntervalError,
    MissingNarrationError,
    NegativeTimeError,
    NonFiniteScoreError,
    NonFiniteTimeError,
    SchemaViolation,
)

# Entries of an episodic memory must tile the candidate interval; adjacent
# clips may disagree by at most this much (float noise from serialization).
CONTIGUITY_TOLERANCE_S = 1e-6


def _as_finite_time(value, what: str) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise NonFiniteTimeError(f"{what} is not a number: {value!r}") from None
    if not math.isfinite(value):
        raise NonFiniteTimeError(f"{what} must be finite, got {value!r}")
    return value


@dataclass(frozen=True, slots=True)
class TimeInterval:
    """A half-open time span ``[start_s, end_s)`` in seconds.

    Zero-length intervals are allowed (degenerate ground-truth
    annotations); candidate segments reject them at their own level.
    """

    start_s: float
    end_s: float

    def __post_init__(self):
        object.__setattr__(self, "start_s", _as_finite_time(self.start_s, "start_s"))
        object.__setattr__(self, "end_s", _as_finite_time(self.end_s, "end_s"))
        if self.start_s < 0:
            raise NegativeTimeError(f"start_s must be >= 0, got {self.start_s}")
        if self.end_s < self.start_s:
            raise InvertedIntervalError(
                f"end_s {self.end_s} precedes start_s {self.start_s}"
            )

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s

    def overlaps(self, other: "TimeInterval") -> bool:
        """True when the two spans share a positive-length stretch."""
        return self.start_s < other.end_s and other.start_s < self.end_s


@dataclass(frozen=True, slots=True)
class CandidateSegment:
    """One proposed segment: a non-degenerate interval, model score, rank."""

    interval: TimeInterval
    score: float
    rank: int

    def __post_init__(self):
        if self.interval.duration_s <= 0:
            raise InvertedIntervalError(
                f"candidate interval must have positive length, got "
                f"[{self.interval.start_s}, {self.interval.end_s})"
            )
        score = self.score
        try:
            score = float(score)
        except (TypeError, ValueError):
            raise NonFiniteScoreError(f"score is not a number: {score!r}") from None
        if not math.isfinite(score):
            raise NonFiniteScoreError(f"score must be finite, got {score!r}")
        object.__setattr__(self, "score", score)
        if not isinstance(self.rank, int) or isinstance(self.rank, bool) or self.rank < 1:
            raise InvalidRankError(f"rank must be a positive integer, got {self.rank!r}")


class CandidateKey(NamedTuple):
    """Addresses one candidate of one query: (video, query, rank)."""

    video_id: str
    query_id: str
    rank: int


def _require_id(value, what: str) -> str:
    if not isinstance(value, str) or not value:
        raise SchemaViolation(what, f"must be a non-empty string, got {value!r}")
    return value


@dataclass(frozen=True, slots=True)
class CandidateList:
    """Ordered candidates for one query; rank equals 1-based position.

    The constructor enforces the positional-rank invariant only.
    Descending-score order is the canonical form established by
    :func:`validate_candidate_list`; reranked lists deliberately break it
    while keeping positional ranks.
    """

    video_id: str
    query_id: str
    candidates: tuple[CandidateSegment, ...]

    def __post_init__(self):
        _require_id(self.video_id, "video_id")
        _require_id(self.query_id, "query_id")
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if not self.candidates:
            raise EmptyListError(f"query '{self.query_id}' has no candidates")
        for position, candidate in enumerate(self.candidates):
            if candidate.rank != position + 1:
                raise InvalidRankError(
                    f"candidate at position {position} carries rank "
                    f"{candidate.rank}; expected {position + 1}"
                )

    def __len__(self) -> int:
        return len(self.candidates)

    def intervals(self) -> tuple[TimeInterval, ...]:
        return tuple(c.interval for c in self.candidates)


def validate_candidate_list(clist: CandidateList) -> CandidateList:
    """Return the canonical form of a candidate list.

    Candidates are ordered by descending score, ties broken by earlier
    start then shorter duration, and ranks reassigned by position. The
    operation is idempotent and stable on already-canonical input.
    """
    ordered = sorted(
        clist.candidates,
        key=lambda c: (-c.score, c.interval.start_s, c.interval.duration_s),
    )
    reranked = tuple(
        replace(candidate, rank=position + 1) for position, candidate in enumerate(ordered)
    )
    return CandidateList(clist.video_id, clist.query_id, reranked)


@dataclass(frozen=True, slots=True)
class Query:
    """One localization request against one video."""

    query_id: str
    video_id: str
    text: str
    order_index: int | None = None
    ground_truth: TimeInterval | None = None

    def __post_init__(self):
        _require_id(self.query_id, "query_id")
        _require_id(self.video_id, "video_id")
        if not isinstance(self.text, str):
            raise SchemaViolation("text", f"must be a string, got {self.text!r}")
        if self.order_index is not None:
            if not isinstance(self.order_index, int) or isinstance(self.order_index, bool):
                raise SchemaViolation(
                    "order_index", f"must be an integer, got {self.order_index!r}"
                )
            if self.order_index < 0:
                raise SchemaViolation(
                    "order_index", f"must be >= 0, got {self.order_index}"
                )


@dataclass(frozen=True, slots=True)
class SequenceTask:
    """An ordered run of step queries with one candidate list per query."""

    video_id: str
    queries: tuple[Query, ...]
    lists: tuple[CandidateList, ...]

    def __post_init__(self):
        _require_id(self.video_id, "video_id")
        object.__setattr__(self, "queries", tuple(self.queries))
        object.__setattr__(self, "lists", tuple(self.lists))
        if not self.queries:
            raise SchemaViolation("queries", "sequence task has no queries")
        if len(self.queries) != len(self.lists):
            raise SchemaViolation(
                "lists",
                f"{len(self.lists)} candidate lists for {len(self.queries)} queries",
            )
        previous = None
        for query, clist in zip(self.queries, self.lists):
            if query.video_id != self.video_id or clist.video_id != self.video_id:
                raise SchemaViolation("video_id", "task spans multiple videos")
            if query.order_index is None:
                raise SchemaViolation(
                    "order_index", f"query '{query.query_id}' has no order index"
                )
            if previous is not None and query.order_index <= previous:
                raise SchemaViolation(
                    "order_index",
                    f"order indices must be strictly increasing, got {previous} "
                    f"then {query.order_index}",
                )
            previous = query.order_index
            if clist.query_id != query.query_id:
                raise SchemaViolation(
                    "query_id",
                    f"list for '{clist.query_id}' aligned with query "
                    f"'{query.query_id}'",
                )
            if not clist.candidates:
                raise EmptyCandidateListError(query.query_id)

    def __len__(self) -> int:
        return len(self.queries)


@dataclass(frozen=True, slots=True)
class Selection:
    """One chosen candidate position (0-based) per query of a task."""

    choices: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "choices", tuple(self.choices))
        for choice in self.choices:
            if not isinstance(choice, int) or isinstance(choice, bool) or choice < 0:
                raise SchemaViolation(
                    "choices", f"must be non-negative integers, got {choice!r}"
                )


@dataclass(frozen=True, slots=True)
class MemoryEntry:
    """One clip of a candidate paired with its narration."""

    clip: TimeInterval
    narration: str

    def __post_init__(self):
        if not isinstance(self.narration, str) or not self.narration.strip():
            raise MissingNarrationError(
                f"clip [{self.clip.start_s}, {self.clip.end_s}) has no narration"
            )


@dataclass(frozen=True, slots=True)
class EpisodicMemory:
    """Ordered per-clip narrations tiling one candidate segment."""

    candidate_key: CandidateKey
    entries: tuple[MemoryEntry, ...]
    prompt_version: str
    backend_id: str

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if not self.entries:
            raise MissingNarrationError(
                f"memory for {self.candidate_key} has no entries"
            )
        previous = None
        for entry in self.entries:
            if previous is not None:
                gap = entry.clip.start_s - previous.end_s
                if abs(gap) > CONTIGUITY_TOLERANCE_S:
                    raise MissingNarrationError(
                        f"memory for {self.candidate_key} is not contiguous at "
                        f"{previous.end_s} -> {entry.clip.start_s}"
                    )
            previous = entry.clip

    @property
    def span(self) -> TimeInterval:
        """The candidate interval covered by the entries."""
        return TimeInterval(self.entries[0].clip.start_s, self.entries[-1].clip.end_s)


class MetricCell(NamedTuple):
    """One recall value at a (k, IoU-threshold) pair, as a percentage."""

    k: int
    iou: float
    value: float


@dataclass(frozen=True, slots=True)
class MetricsReport:
    """Recall@k at each IoU threshold plus the mean of the R@1 values."""

    cells: tuple[MetricCell, ...]
    mean_r1: float
    num_queries: int

    def __post_init__(self):
        object.__setattr__(
            self, "cells", tuple(MetricCell(*cell) for cell in self.cells)
        )
        for cell in self.cells:
            if not 0.0 <= cell.value <= 100.0:
                raise SchemaViolation(
                    "cells", f"percentage out of [0, 100]: {cell.value}"
                )
        if not 0.0 <= self.mean_r1 <= 100.0:
            raise SchemaViolation("mean_r1", f"percentage out of [0, 100]: {self.mean_r1}")
        by_iou: dict[float, list[MetricCell]] = {}
        for cell in self.cells:
            by_iou.setdefault(cell.iou, []).append(cell)
        for iou, group in by_iou.items():
            group.sort(key=lambda c: c.k)
            for lower, higher in zip(group, group[1:]):
                if higher.value < lower.value:
                    raise SchemaViolation(
                        "cells",
                        f"recall must be monotone in k at iou {iou}: "
                        f"R@{lower.k}={lower.value} > R@{higher.k}={higher.value}",
                    )

    def value_at(self, k: int, iou: float) -> float:
        for cell in self.cells:
            if cell.k == k and cell.iou == iou:
                return cell.value
        raise KeyError((k, iou))

    def as_mapping(self) -> dict[tuple[int, float], float]:
        return {(cell.k, cell.iou): cell.value for cell in self.cells}
