"""Shared builders and independent oracles used across the test suite."""

from __future__ import annotations

import random

from memrerank import (
    CandidateList,
    CandidateSegment,
    Dataset,
    Query,
    Scenario,
    ScenarioKnobs,
    SequenceTask,
    TimeInterval,
    Track,
)
from memrerank.ingest import VideoRecord
from memrerank.synth import ScriptedEvent, query_text


def interval(start, end) -> TimeInterval:
    return TimeInterval(float(start), float(end))


def candidate(start, end, score, rank) -> CandidateSegment:
    return CandidateSegment(interval=interval(start, end), score=float(score), rank=rank)


def clist(video_id, query_id, triples) -> CandidateList:
    """Candidate list from (start, end, score) triples, ranks by position."""
    return CandidateList(
        video_id,
        query_id,
        tuple(
            candidate(s, e, score, position + 1)
            for position, (s, e, score) in enumerate(triples)
        ),
    )


def frame_count_oracle(start: float, end: float) -> int:
    """Walk t from start in 1-second steps, counting frames strictly before
    the end; at least one frame is always produced."""
    count = 0
    t = start
    while t < end:
        count += 1
        t += 1.0
    return max(count, 1)


def iou_grid_oracle(a: TimeInterval, b: TimeInterval, points: int = 10_000) -> float:
    """Discretized IoU: midpoint sampling over the joint span."""
    lo = min(a.start_s, b.start_s)
    hi = max(a.end_s, b.end_s)
    if hi == lo:
        return 1.0 if (a.start_s, a.end_s) == (b.start_s, b.end_s) else 0.0
    h = (hi - lo) / points
    inter = union = 0
    for i in range(points):
        t = lo + (i + 0.5) * h
        in_a = a.start_s <= t < a.end_s
        in_b = b.start_s <= t < b.end_s
        inter += in_a and in_b
        union += in_a or in_b
    return inter / union if union else 0.0


def random_sequence_task(rng: random.Random, max_k: int = 6, max_c: int = 5) -> SequenceTask:
    """A goalstep task with random list sizes, starts, and scores."""
    k = rng.randint(1, max_k)
    video_id = "rv0"
    queries = []
    lists = []
    for i in range(k):
        query_id = f"{video_id}-q{i}"
        queries.append(
            Query(
                query_id=query_id,
                video_id=video_id,
                text=f"step {i}",
                order_index=i,
            )
        )
        c = rng.randint(1, max_c)
        triples = []
        for _ in range(c):
            start = rng.uniform(0.0, 600.0)
            length = rng.uniform(1.0, 60.0)
            triples.append((start, start + length, rng.random()))
        # Positional ranks stand in for descending-score order; the
        # optimizer only consumes ranks and starts.
        lists.append(clist(video_id, query_id, triples))
    return SequenceTask(video_id, tuple(queries), tuple(lists))


def tiny_scenario() -> Scenario:
    """A handcrafted two-query scenario with a known event script.

    Video v0 (duration 200 s) scripts events e0 [10, 40), e1 [50, 62),
    e2 [70, 95), e3 [100, 130), e4 [140, 165). Query q0 targets e1,
    q1 targets e3. Candidate lists are fixed so tests can enumerate
    IoUs by hand.
    """
    video_id = "v0"
    events = (
        ScriptedEvent(interval(10, 40), "e0"),
        ScriptedEvent(interval(50, 62), "e1"),
        ScriptedEvent(interval(70, 95), "e2"),
        ScriptedEvent(interval(100, 130), "e3"),
        ScriptedEvent(interval(140, 165), "e4"),
    )
    q0 = Query(
        query_id="v0-q000",
        video_id=video_id,
        text=query_text("v0-q000", "e1"),
        order_index=0,
        ground_truth=interval(50, 62),
    )
    q1 = Query(
        query_id="v0-q001",
        video_id=video_id,
        text=query_text("v0-q001", "e3"),
        order_index=1,
        ground_truth=interval(100, 130),
    )
    lists = (
        clist(
            video_id,
            "v0-q000",
            [(10, 40, 0.9), (48, 60, 0.8), (70, 95, 0.7), (140, 165, 0.6), (12, 35, 0.5)],
        ),
        clist(
            video_id,
            "v0-q001",
            [(70, 95, 0.95), (10, 40, 0.85), (102, 131, 0.75), (140, 165, 0.65), (50, 62, 0.55)],
        ),
    )
    dataset = Dataset(
        track=Track.GOALSTEP,
        videos=(VideoRecord(video_id, 200.0, (q0, q1)),),
    )
    return Scenario(
        seed=0,
        knobs=ScenarioKnobs(num_videos=1, queries_per_video=2),
        dataset=dataset,
        event_script=((video_id, events),),
        candidates=lists,
        latent_positives=(),
    )
