"""Best-of-N rejection sampling: draw N candidates, keep the top-scoring one."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Protocol

from .errors import GenerationError, ScorerError
from .reward import ScorerInterface


class GeneratorInterface(Protocol):
    def sample(self, context_text: str, seed: int) -> str: ...


@dataclass(frozen=True)
class SelectionResult:
    chosen_index: int
    chosen_text: str
    scores: tuple[float, ...]
    latency_ms: int

    def __post_init__(self):
        object.__setattr__(self, "scores", tuple(self.scores))
        if not 0 <= self.chosen_index < len(self.scores):
            raise ValueError("chosen_index out of range")
        if self.scores[self.chosen_index] != max(self.scores):
            raise ValueError("chosen_index is not the argmax")


class StubGenerator:
    """Deterministic generator cycling through canned responses; seed picks
    the response. Configurable from a plain text file, one response per line."""

    def __init__(self, responses: list[str]):
        if not responses:
            raise ValueError("need at least one canned response")
        self.responses = list(responses)

    @classmethod
    def from_file(cls, path) -> "StubGenerator":
        with open(path, encoding="utf-8") as fh:
            lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
        return cls(lines)

    def sample(self, context_text: str, seed: int) -> str:
        return self.responses[seed % len(self.responses)]


def best_of_n(candidates: list[str], context_text: str,
              scorer: ScorerInterface) -> SelectionResult:
    """Score every candidate and return the argmax; ties break to the lowest
    index so replays are deterministic."""
    if not candidates:
        raise ValueError("candidate list is empty")
    start = time.perf_counter()
    scores = []
    for i, cand in enumerate(candidates):
        try:
            scores.append(scorer.score(context_text, cand))
        except ScorerError as exc:
            raise ScorerError(f"scoring candidate {i} failed: {exc}") from exc
    best = max(range(len(scores)), key=lambda i: (scores[i], -i))
    latency_ms = int((time.perf_counter() - start) * 1000)
    return SelectionResult(chosen_index=best, chosen_text=candidates[best],
                           scores=tuple(scores), latency_ms=latency_ms)


def generate_and_select(generator: GeneratorInterface, context_text: str,
                        n: int, scorer: ScorerInterface, seed: int,
                        partial: bool = False) -> SelectionResult:
    """Draw n candidates with derived seeds seed..seed+n-1, then pick the
    best. With partial=True a generator failure is tolerated as long as at
    least one candidate was produced."""
    if n < 1:
        raise ValueError("n must be >= 1")
    start = time.perf_counter()
    candidates: list[str] = []
    failures: list[str] = []
    for i in range(n):
        try:
            candidates.append(generator.sample(context_text, seed + i))
        except Exception as exc:  # backend failures are arbitrary
            failures.append(f"candidate {i}: {exc}")
    if failures and not (partial and candidates):
        raise GenerationError(
            f"{len(candidates)} of {n} candidates succeeded; first failure: "
            f"{failures[0]}", n_succeeded=len(candidates))
    result = best_of_n(candidates, context_text, scorer)
    latency_ms = int((time.perf_counter() - start) * 1000)
    return SelectionResult(chosen_index=result.chosen_index,
                           chosen_text=result.chosen_text,
                           scores=result.scores, latency_ms=latency_ms)
