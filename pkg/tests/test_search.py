import dataclasses
import json

import numpy as np
import pytest

from prunesearch import (
    EvaluationError,
    LayerAssignment,
    PruningProposal,
    SearchState,
    StateError,
    resume,
    run,
    select_batch,
)
from prunesearch.benchmarks import pointpillars_lookup, toy3
from prunesearch.search import ConfigMismatchError, SearchConfig, step

from conftest import chain


def P(i):
    net = chain(3)
    opts = net.layers[0].options()
    return PruningProposal.dense(net).replace({"l0": opts[i]})


class TestSelectBatch:
    def test_single(self):
        assert select_batch([P(0)], [0.3], 8, set()) == [P(0)]

    def test_ties_keep_pool_order(self):
        assert select_batch([P(1), P(2), P(3)], [0.5, 0.5, 0.1], 2, set()) == [P(1), P(2)]
        assert select_batch([P(3), P(2), P(1)], [0.1, 0.5, 0.5], 2, set()) == [P(2), P(1)]

    def test_excludes_observed_and_repeats(self):
        pool = [P(1), P(1), P(2), P(3)]
        assert select_batch(pool, [0.9, 0.9, 0.5, 0.4], 3, {P(2)}) == [P(1), P(3)]

    def test_all_observed(self):
        assert select_batch([P(1), P(1)], [1.0, 1.0], 4, {P(1)}) == []


def toy_config(**kw):
    return toy3().config(**{"seed": 0, "max_evaluations": 24, "batch_size": 4, **kw})


class TestRun:
    def test_pure_random_when_budget_is_bootstrap(self):
        cfg = toy_config(max_evaluations=10, init_random_evaluations=10)
        _, state = run(cfg)
        assert len(state.observations) == 10
        assert state.guidance == [] and state.iteration == 0

    def test_budget_respected_and_no_repeats(self):
        cfg = toy_config(max_evaluations=30, batch_size=7)
        _, state = run(cfg)
        assert len(state.observations) == 30
        props = [o.proposal for o in state.observations]
        assert len(set(props)) == len(props)

    def test_best_so_far_non_decreasing(self):
        _, state = run(toy_config(max_evaluations=40))
        curve = np.maximum.accumulate([o.reward for o in state.observations])
        assert np.all(np.diff(curve) >= 0)
        assert state.best.reward == curve[-1]

    def test_best_ties_go_to_earliest(self):
        _, state = run(toy_config(max_evaluations=12))
        r = [o.reward for o in state.observations]
        assert state.best_index == r.index(max(r))

    def test_deterministic(self):
        a = run(toy_config())[1].dumps()
        b = run(toy_config())[1].dumps()
        assert a == b
        assert run(toy_config(seed=1))[1].dumps() != a

    def test_guidance_snapshots(self):
        _, state = run(toy_config())
        assert [g["iteration"] for g in state.guidance] == list(range(1, state.iteration + 1))
        for g in state.guidance:
            assert sum(g["probabilities"].values()) == pytest.approx(1.0)

    def test_pointpillars_lookup_finds_ours(self):
        prob = pointpillars_lookup()
        _, state = run(prob.config(seed=0, max_evaluations=16))
        assert state.exhausted and len(state.observations) == 4
        ev = prob.evaluator.build(prob.network)
        assert ev.key_for(state.best.proposal) == "Ours (0.24)"
        assert state.best.reward == 75.19

    def test_stops_when_pools_hold_nothing_new(self):
        cfg = toy_config(max_evaluations=400, batch_size=32)
        _, state = run(cfg)
        assert state.exhausted and state.complete
        props = [o.proposal for o in state.observations]
        space = set(toy3().all_proposals())
        assert len(space) == 215
        assert len(set(props)) == len(props) and set(props) <= space
        # pools are regenerated a few times before giving up, so nearly all is covered
        assert len(props) >= 200

    def test_bad_config(self):
        with pytest.raises(ValueError):
            toy_config(max_evaluations=4, init_random_evaluations=8)
        with pytest.raises(ValueError):
            toy_config(batch_size=0)


class TestResume:
    def test_resume_after_bootstrap_is_identical(self, tmp_path):
        cfg = toy_config(max_evaluations=28)
        _, reference = run(cfg)

        state = SearchState(cfg)
        ev = cfg.evaluator.build(cfg.network)
        step(state, ev)
        assert len(state.observations) == cfg.init_random_evaluations
        path = tmp_path / "state.json"
        state.save(path)
        _, resumed = resume(path)
        assert resumed.dumps() == reference.dumps()

    def test_resume_from_every_batch(self, tmp_path):
        cfg = toy_config(max_evaluations=28)
        _, reference = run(cfg)
        state = SearchState(cfg)
        ev = cfg.evaluator.build(cfg.network)
        k = 0
        while step(state, ev):
            k += 1
            path = tmp_path / f"s{k}.json"
            state.save(path)
            assert resume(path)[1].dumps() == reference.dumps()

    def test_completed_run_is_unchanged(self, tmp_path):
        path = tmp_path / "state.json"
        run(toy_config(), state_path=path)
        before = path.read_bytes()

        class Exploding:
            def measure(self, ps):
                raise AssertionError("should not evaluate")

            def close(self):
                pass

        _, state = resume(path, evaluator=Exploding())
        assert len(state.observations) == 24
        assert path.read_bytes() == before

    def test_edited_config_refused(self, tmp_path):
        path = tmp_path / "state.json"
        run(toy_config(max_evaluations=12), state_path=path)
        other = toy_config(max_evaluations=12, batch_size=3)
        with pytest.raises(ConfigMismatchError):
            resume(path, config=other)
        # identical config is accepted
        resume(path, config=toy_config(max_evaluations=12))

    def test_failure_saves_completed_batches(self, tmp_path):
        cfg = toy_config(max_evaluations=24)
        inner = cfg.evaluator.build(cfg.network)

        class Flaky:
            calls = 0

            def measure(self, ps):
                Flaky.calls += 1
                if Flaky.calls == 3:
                    raise EvaluationError("boom", 0)
                return inner.measure(ps)

            def close(self):
                pass

        path = tmp_path / "state.json"
        with pytest.raises(EvaluationError):
            run(cfg, state_path=path, evaluator=Flaky())
        assert len(SearchState.load(path).observations) == 8 + 4
        _, resumed = resume(path)
        assert resumed.dumps() == run(cfg)[1].dumps()


class TestState:
    def test_round_trip(self, tmp_path):
        _, state = run(toy_config())
        path = tmp_path / "s.json"
        state.save(path)
        loaded = SearchState.load(path)
        assert loaded.dumps() == state.dumps()
        assert loaded.observations == state.observations
        assert not list(tmp_path.glob("*.tmp"))

    def test_format_is_sorted_json(self):
        _, state = run(toy_config(max_evaluations=8))
        text = state.dumps()
        d = json.loads(text)
        assert text == json.dumps(d, sort_keys=True, indent=1) + "\n"
        assert d["fingerprint"] == state.config.fingerprint()
        assert d["rng"]["seed"] == 0

    @pytest.mark.parametrize("corrupt", [
        lambda text: text[: len(text) // 2],
        lambda text: text.replace('"format": 1', '"format": 99'),
        lambda text: _edit(text, lambda d: d["observations"][0].update(reward=1e9)),
        lambda text: _edit(text, lambda d: d["config"]["reward"].update(alpha=0.3)),
        lambda text: _edit(text, lambda d: d.pop("observations")),
    ], ids=["truncated", "format", "reward", "config", "missing"])
    def test_corruption_detected(self, tmp_path, corrupt):
        _, state = run(toy_config(max_evaluations=8))
        path = tmp_path / "s.json"
        path.write_text(corrupt(state.dumps()))
        with pytest.raises(StateError):
            SearchState.load(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(StateError):
            SearchState.load(tmp_path / "nope.json")

    def test_config_round_trip(self):
        cfg = toy_config()
        again = SearchConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
        assert again == cfg and again.fingerprint() == cfg.fingerprint()
        assert dataclasses.replace(cfg, seed=5).fingerprint() != cfg.fingerprint()


def _edit(text, fn):
    d = json.loads(text)
    fn(d)
    return json.dumps(d)


def test_encodable_bootstrap_only():
    cfg = toy_config(max_evaluations=8)
    _, state = run(cfg)
    for o in state.observations:
        assert not all(a == LayerAssignment("none", "skip") for _, a in o.proposal.assignments)
