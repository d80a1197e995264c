import pytest

from memrerank import (
    ScenarioKnobs,
    Track,
    generate_scenario,
    load_scenario,
    oracle_selector,
    stub_backend,
    temporal_iou,
    worst_selector,
    write_scenario,
)
from memrerank.errors import InvalidKnobsError
from memrerank.narration import BackendRequest, FrameRef, narration_instruction, DEFAULT_PROMPT
from memrerank.rerank import build_rerank_prompt
from memrerank.synth import (
    latent_inclusive_ground_truth,
    query_text,
    recall_with_targets,
)

from helpers import interval, tiny_scenario


class TestKnobs:
    def test_ranges_validated(self):
        with pytest.raises(InvalidKnobsError):
            ScenarioKnobs(num_videos=0)
        with pytest.raises(InvalidKnobsError):
            ScenarioKnobs(recall_rho=1.5)
        with pytest.raises(InvalidKnobsError):
            ScenarioKnobs(jitter_s=-1.0)
        with pytest.raises(InvalidKnobsError):
            ScenarioKnobs(latent_positive_rate=-0.1)


class TestGenerateScenario:
    def test_deterministic(self):
        knobs = ScenarioKnobs(num_videos=3, queries_per_video=4)
        assert generate_scenario(knobs, 7) == generate_scenario(knobs, 7)

    def test_different_seeds_differ(self):
        knobs = ScenarioKnobs(num_videos=3, queries_per_video=4)
        assert generate_scenario(knobs, 7) != generate_scenario(knobs, 8)

    def test_counts_and_order_indices(self):
        knobs = ScenarioKnobs(num_videos=3, queries_per_video=4)
        scenario = generate_scenario(knobs, 1)
        queries = list(scenario.dataset.iter_queries())
        assert len(queries) == 12
        for video in scenario.dataset.videos:
            assert [q.order_index for q in video.queries] == [0, 1, 2, 3]

    def test_full_recall_zero_jitter_rank_one_equals_gt(self):
        knobs = ScenarioKnobs(
            num_videos=4, queries_per_video=5, recall_rho=1.0, jitter_s=0.0,
            latent_positive_rate=0.0,
        )
        scenario = generate_scenario(knobs, 3)
        lists = scenario.candidates_by_query()
        for query in scenario.dataset.iter_queries():
            top = lists[query.query_id].candidates[0]
            assert top.interval == query.ground_truth

    def test_gt_starts_non_decreasing_within_video(self):
        scenario = generate_scenario(ScenarioKnobs(num_videos=5, queries_per_video=6), 11)
        for video in scenario.dataset.videos:
            starts = [q.ground_truth.start_s for q in video.queries]
            assert starts == sorted(starts)

    def test_recall_knob_controls_hit_fraction(self):
        knobs = ScenarioKnobs(
            num_videos=100, queries_per_video=5, recall_rho=0.6, jitter_s=2.0
        )
        scenario = generate_scenario(knobs, 29)
        gt = scenario.ground_truth_by_query()
        hits = 0
        for query_id, clist in scenario.candidates_by_query().items():
            best = max(temporal_iou(c.interval, gt[query_id]) for c in clist.candidates)
            hits += best >= 0.5
        fraction = hits / len(gt)
        assert abs(fraction - 0.6) < 0.06

    def test_every_gt_in_event_script(self):
        scenario = generate_scenario(ScenarioKnobs(num_videos=3, queries_per_video=4), 17)
        script = scenario.script_by_video()
        for query in scenario.dataset.iter_queries():
            assert any(
                e.interval == query.ground_truth for e in script[query.video_id]
            )

    def test_nlq_track_has_no_order(self):
        scenario = generate_scenario(
            ScenarioKnobs(num_videos=2, queries_per_video=3), 5, track=Track.NLQ
        )
        assert scenario.dataset.track is Track.NLQ
        assert all(q.order_index is None for q in scenario.dataset.iter_queries())

    def test_candidate_lists_are_canonical(self):
        scenario = generate_scenario(ScenarioKnobs(num_videos=3, queries_per_video=4), 23)
        for clist in scenario.candidates:
            scores = [c.score for c in clist.candidates]
            assert scores == sorted(scores, reverse=True)
            assert [c.rank for c in clist.candidates] == list(range(1, len(scores) + 1))


class TestStubBackend:
    def _request(self, scenario, video_id, clip):
        return BackendRequest(
            instruction=narration_instruction(DEFAULT_PROMPT, video_id, clip, 1),
            images=(FrameRef(video_id, clip.start_s),),
        )

    def test_narration_lists_overlapping_events_in_order(self):
        scenario = tiny_scenario()
        backend = stub_backend(scenario)
        reply = backend.narrate(self._request(scenario, "v0", interval(55, 105)))
        assert reply.text == "events: e1; e2; e3"

    def test_narration_none(self):
        scenario = tiny_scenario()
        backend = stub_backend(scenario)
        reply = backend.narrate(self._request(scenario, "v0", interval(63, 69)))
        assert reply.text == "events: none"

    def test_identical_request_identical_reply(self):
        scenario = tiny_scenario()
        backend = stub_backend(scenario)
        request = self._request(scenario, "v0", interval(10, 30))
        assert backend.narrate(request) == backend.narrate(request)


def _selection_prompt(scenario, query_id):
    """Build a real selection prompt through the narration and rerank paths."""
    from memrerank import NarrationEngine, plan_candidate

    clist = scenario.candidates_by_query()[query_id]
    query = next(
        q for q in scenario.dataset.iter_queries() if q.query_id == query_id
    )
    engine = NarrationEngine(stub_backend(scenario))
    memories = [
        engine.narrate_candidate(
            plan_candidate(c, 20.0, 1.0, video_id=clist.video_id, query_id=query_id)
        )
        for c in clist.candidates
    ]
    return query, clist, build_rerank_prompt(query, memories, len(memories))


class TestSelectors:
    def test_oracle_answers_argmax_by_enumeration(self):
        scenario = tiny_scenario()
        query, clist, prompt = _selection_prompt(scenario, "v0-q001")
        ious = [temporal_iou(c.interval, query.ground_truth) for c in clist.candidates]
        expected = max(range(len(ious)), key=lambda i: (ious[i], -i)) + 1
        reply = oracle_selector(scenario).select(prompt)
        assert reply.text == str(expected) == "3"

    def test_oracle_all_zero_ious_picks_first(self):
        scenario = tiny_scenario()
        # q0 candidates all miss gt [50, 62) except candidate 2; shrink the
        # check to the all-zero case by moving gt far away via a fresh prompt.
        query, clist, prompt = _selection_prompt(scenario, "v0-q000")
        backend = oracle_selector(scenario)
        backend._gt[query.query_id] = interval(500.0, 510.0)
        assert backend.select(prompt).text == "1"

    def test_single_candidate_answer_is_one(self):
        from helpers import clist as make_clist
        from memrerank import NarrationEngine, plan_candidate

        scenario = tiny_scenario()
        single = make_clist("v0", "v0-q000", [(48, 60, 0.8)])
        backend = oracle_selector(scenario)
        backend._lists["v0-q000"] = single
        query = next(
            q for q in scenario.dataset.iter_queries() if q.query_id == "v0-q000"
        )
        engine = NarrationEngine(stub_backend(scenario))
        memories = [
            engine.narrate_candidate(
                plan_candidate(c, 20.0, 1.0, video_id="v0", query_id="v0-q000")
            )
            for c in single.candidates
        ]
        prompt = build_rerank_prompt(query, memories, 1)
        assert backend.select(prompt).text == "1"

    def test_worst_selector_answers_argmin(self):
        scenario = tiny_scenario()
        query, clist, prompt = _selection_prompt(scenario, "v0-q001")
        ious = [temporal_iou(c.interval, query.ground_truth) for c in clist.candidates]
        expected = min(range(len(ious)), key=lambda i: (ious[i], i)) + 1
        assert worst_selector(scenario).select(prompt).text == str(expected)


class TestScenarioFile:
    def test_round_trip(self, tmp_path):
        scenario = generate_scenario(
            ScenarioKnobs(num_videos=3, queries_per_video=4, latent_positive_rate=0.5), 13
        )
        path = tmp_path / "scenario.json"
        write_scenario(scenario, path)
        assert load_scenario(path) == scenario

    def test_write_is_deterministic(self, tmp_path):
        scenario = generate_scenario(ScenarioKnobs(num_videos=2, queries_per_video=3), 19)
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        write_scenario(scenario, a)
        write_scenario(scenario, b)
        assert a.read_bytes() == b.read_bytes()


class TestLatentPositives:
    def test_tracked_and_share_labels(self):
        knobs = ScenarioKnobs(
            num_videos=30, queries_per_video=3, latent_positive_rate=1.0
        )
        scenario = generate_scenario(knobs, 31)
        latents = scenario.latent_positives_by_query()
        assert latents, "latent positives should be recorded at rate 1.0"
        labels = scenario.target_label_by_query()
        script = scenario.script_by_video()
        for query in scenario.dataset.iter_queries():
            for twin in latents.get(query.query_id, ()):
                video_events = script[query.video_id]
                twin_labels = [e.label for e in video_events if e.interval == twin]
                assert labels[query.query_id] in twin_labels

    def test_latent_inclusive_recall_at_least_metric_recall(self):
        knobs = ScenarioKnobs(
            num_videos=40, queries_per_video=3, latent_positive_rate=0.5,
            recall_rho=0.5, jitter_s=2.0,
        )
        scenario = generate_scenario(knobs, 37)
        predictions = {
            qid: clist.intervals()
            for qid, clist in scenario.candidates_by_query().items()
        }
        strict = {qid: (gt,) for qid, gt in scenario.ground_truth_by_query().items()}
        inclusive = latent_inclusive_ground_truth(scenario)
        for k in (1, 5):
            for m in (0.3, 0.5):
                visible = recall_with_targets(predictions, strict, k, m)
                broad = recall_with_targets(predictions, inclusive, k, m)
                assert broad >= visible


class TestQueryText:
    def test_carries_id_and_label(self):
        text = query_text("v1-q007", "e3")
        assert "[v1-q007]" in text
        assert "event e3" in text
