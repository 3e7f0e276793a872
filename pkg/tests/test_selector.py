import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from engage.errors import GenerationError, ScorerError
from engage.selector import (
    SelectionResult,
    StubGenerator,
    best_of_n,
    generate_and_select,
)


class LengthScorer:
    """Deterministic toy scorer: longer responses score higher."""

    def score(self, context_text, response_text):
        return min(len(response_text) / 100.0, 1.0)


class TableScorer:
    def __init__(self, table):
        self.table = table
        self.calls = 0

    def score(self, context_text, response_text):
        self.calls += 1
        return self.table[response_text]


class FailingScorer:
    def score(self, context_text, response_text):
        raise ScorerError("backend down")


class TestBestOfN:
    def test_picks_argmax(self):
        result = best_of_n(["a", "medium text", "hi"], "ctx", LengthScorer())
        assert result.chosen_index == 1
        assert result.chosen_text == "medium text"
        assert len(result.scores) == 3

    def test_tie_breaks_to_lowest_index(self):
        scorer = TableScorer({"x": 0.5, "y": 0.5, "z": 0.5})
        assert best_of_n(["x", "y", "z"], "c", scorer).chosen_index == 0
        scorer = TableScorer({"x": 0.2, "y": 0.9, "z": 0.9})
        assert best_of_n(["x", "y", "z"], "c", scorer).chosen_index == 1

    def test_single_candidate(self):
        result = best_of_n(["only"], "c", LengthScorer())
        assert result.chosen_index == 0

    def test_empty_candidates(self):
        with pytest.raises(ValueError):
            best_of_n([], "c", LengthScorer())

    def test_scorer_failure_names_candidate(self):
        with pytest.raises(ScorerError, match="candidate 0"):
            best_of_n(["a"], "c", FailingScorer())

    def test_scores_every_candidate_once(self):
        scorer = TableScorer({"a": 0.1, "b": 0.2, "c": 0.3, "d": 0.4})
        best_of_n(["a", "b", "c", "d"], "ctx", scorer)
        assert scorer.calls == 4

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=8))
    def test_chosen_dominates_all(self, scores):
        texts = [f"t{i}" for i in range(len(scores))]
        scorer = TableScorer(dict(zip(texts, scores)))
        result = best_of_n(texts, "c", scorer)
        assert all(result.scores[result.chosen_index] >= s for s in result.scores)

    def test_permutation_covariance(self):
        # relabeling candidates permutes scores; the winning text (for
        # distinct scores) is invariant
        table = {"a": 0.3, "b": 0.9, "c": 0.1, "d": 0.6}
        for perm in itertools.permutations(["a", "b", "c", "d"]):
            result = best_of_n(list(perm), "c", TableScorer(table))
            assert result.chosen_text == "b"
            assert result.scores == tuple(table[t] for t in perm)


class TestSelectionResult:
    def test_rejects_out_of_range_index(self):
        with pytest.raises(ValueError):
            SelectionResult(3, "x", (0.1, 0.2), 0)

    def test_rejects_non_argmax(self):
        with pytest.raises(ValueError):
            SelectionResult(0, "x", (0.1, 0.9), 0)


class TestStubGenerator:
    def test_seed_selects_response(self):
        gen = StubGenerator(["r0", "r1", "r2"])
        assert gen.sample("ctx", 0) == "r0"
        assert gen.sample("ctx", 4) == "r1"

    def test_from_file(self, tmp_path):
        path = tmp_path / "responses.txt"
        path.write_text("first\n\nsecond\n")
        gen = StubGenerator.from_file(path)
        assert gen.responses == ["first", "second"]

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            StubGenerator([])


class FlakyGenerator:
    """Fails on odd seeds."""

    def __init__(self, fail_all=False):
        self.fail_all = fail_all
        self.seeds = []

    def sample(self, context_text, seed):
        self.seeds.append(seed)
        if self.fail_all or seed % 2 == 1:
            raise RuntimeError("backend exploded")
        return f"resp-{seed}"


class TestGenerateAndSelect:
    def test_derived_seeds_are_consecutive(self):
        gen = FlakyGenerator()
        gen.fail_all = False
        result = generate_and_select(StubGenerator([f"r{i}" for i in range(10)]),
                                     "ctx", 4, LengthScorer(), seed=3)
        assert len(result.scores) == 4
        spy = FlakyGenerator()
        generate_and_select(spy, "ctx", 3, LengthScorer(), seed=10, partial=True)
        assert spy.seeds == [10, 11, 12]

    def test_deterministic_replay(self):
        gen = StubGenerator([f"resp {'x' * i}" for i in range(8)])
        a = generate_and_select(gen, "ctx", 4, LengthScorer(), seed=2)
        b = generate_and_select(gen, "ctx", 4, LengthScorer(), seed=2)
        assert (a.chosen_index, a.chosen_text, a.scores) == \
               (b.chosen_index, b.chosen_text, b.scores)

    def test_failure_without_partial_raises(self):
        with pytest.raises(GenerationError) as exc:
            generate_and_select(FlakyGenerator(), "ctx", 4, LengthScorer(), seed=0)
        assert exc.value.n_succeeded == 2
        assert "2 of 4" in str(exc.value)

    def test_partial_mode_selects_from_survivors(self):
        result = generate_and_select(FlakyGenerator(), "ctx", 4, LengthScorer(),
                                     seed=0, partial=True)
        assert result.chosen_text in ("resp-0", "resp-2")
        assert len(result.scores) == 2

    def test_partial_mode_with_zero_survivors_raises(self):
        with pytest.raises(GenerationError) as exc:
            generate_and_select(FlakyGenerator(fail_all=True), "ctx", 3,
                                LengthScorer(), seed=0, partial=True)
        assert exc.value.n_succeeded == 0

    def test_n_validation(self):
        with pytest.raises(ValueError):
            generate_and_select(StubGenerator(["a"]), "c", 0, LengthScorer(), 0)

    def test_n_one_returns_first_sample(self):
        gen = StubGenerator(["zero", "one"])
        result = generate_and_select(gen, "c", 1, LengthScorer(), seed=1)
        assert result.chosen_text == "one"
        assert result.chosen_index == 0
