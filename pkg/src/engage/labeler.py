"""Binary engagement pseudo-labels and the bounded scorer context window.

Four labelling strategies over per-response rows:
  continuation-k : engaging iff at least k user messages follow the response
  retry          : engaging iff the response was never regenerated
  star-s         : engaging iff the user rated it >= s stars (unrated dropped)
  intersection-k : continuation-k AND retry
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

from .convlog import ResponseRow

CONTEXT_FORMAT_VERSION = "user-bot-lines/1"
STANDARD_BUDGETS = (128, 256, 512)


@dataclass(frozen=True)
class LabelStrategy:
    kind: str  # continuation | retry | star | intersection
    k: int | None = None
    s: int | None = None

    def __post_init__(self):
        if self.kind in ("continuation", "intersection"):
            if self.k is None or self.k < 1:
                raise ValueError(f"{self.kind} strategy requires k >= 1")
            if self.s is not None:
                raise ValueError(f"{self.kind} strategy does not take s")
        elif self.kind == "star":
            if self.s not in (2, 3, 4):
                raise ValueError("star strategy requires s in {2,3,4}")
            if self.k is not None:
                raise ValueError("star strategy does not take k")
        elif self.kind == "retry":
            if self.k is not None or self.s is not None:
                raise ValueError("retry strategy takes no parameters")
        else:
            raise ValueError(f"unknown strategy kind: {self.kind}")

    def describe(self) -> str:
        if self.kind in ("continuation", "intersection"):
            return f"{self.kind}(k={self.k})"
        if self.kind == "star":
            return f"star(s={self.s})"
        return "retry"


@dataclass(frozen=True)
class LabeledRow:
    row: ResponseRow
    label: int
    strategy: LabelStrategy

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")


@dataclass(frozen=True)
class ContextWindow:
    text: str
    token_budget: int
    truncated: bool


def label_continuation(rows: list[ResponseRow], k: int) -> list[LabeledRow]:
    """Engaging iff >= k user messages followed; the last k responses of a
    conversation get label 0."""
    strategy = LabelStrategy("continuation", k=k)
    return [
        LabeledRow(r, int(r.n_subsequent_user_messages >= k), strategy) for r in rows
    ]


def label_retry(rows: list[ResponseRow]) -> list[LabeledRow]:
    """Engaging iff the user never asked for a regeneration."""
    strategy = LabelStrategy("retry")
    return [LabeledRow(r, int(not r.regenerated), strategy) for r in rows]


def label_star(rows: list[ResponseRow], s: int) -> list[LabeledRow]:
    """Engaging iff rated >= s stars; unrated rows are dropped, not labelled."""
    strategy = LabelStrategy("star", s=s)
    return [
        LabeledRow(r, int(r.star_rating >= s), strategy)
        for r in rows
        if r.star_rating is not None
    ]


def label_intersection(rows: list[ResponseRow], k: int) -> list[LabeledRow]:
    """Engaging iff the conversation continues for k user messages AND the
    response was not regenerated."""
    strategy = LabelStrategy("intersection", k=k)
    return [
        LabeledRow(
            r, int(r.n_subsequent_user_messages >= k and not r.regenerated), strategy
        )
        for r in rows
    ]


def apply_strategy(rows: list[ResponseRow], strategy: LabelStrategy) -> list[LabeledRow]:
    if strategy.kind == "continuation":
        return label_continuation(rows, strategy.k)
    if strategy.kind == "retry":
        return label_retry(rows)
    if strategy.kind == "star":
        return label_star(rows, strategy.s)
    return label_intersection(rows, strategy.k)


def labeled_row_to_dict(lr: LabeledRow) -> dict:
    from .convlog import row_to_dict

    d = row_to_dict(lr.row)
    d["label"] = lr.label
    d["strategy"] = {"kind": lr.strategy.kind, "k": lr.strategy.k, "s": lr.strategy.s}
    return d


def labeled_row_from_dict(obj: dict) -> LabeledRow:
    from .convlog import row_from_dict

    strat = obj["strategy"]
    row_fields = {k: v for k, v in obj.items() if k not in ("label", "strategy")}
    return LabeledRow(
        row=row_from_dict(row_fields),
        label=obj["label"],
        strategy=LabelStrategy(strat["kind"], k=strat.get("k"), s=strat.get("s")),
    )


def render_context(row: ResponseRow, token_budget: int) -> ContextWindow:
    """Serialize the row's context as speaker-tagged lines, newest last, then
    keep only the final token_budget whitespace tokens.

    Tokens are maximal non-whitespace runs; truncation drops whole tokens
    from the oldest end.
    """
    if token_budget < 1:
        raise ValueError("token_budget must be >= 1")
    if token_budget not in STANDARD_BUDGETS:
        warnings.warn(
            f"nonstandard token budget {token_budget} (standard: {STANDARD_BUDGETS})",
            stacklevel=2,
        )
    lines = []
    for turn in row.context_turns:
        lines.append(f"USER: {turn.user_message}")
        lines.append(f"BOT: {turn.response.text}")
    lines.append(f"USER: {row.user_message}")
    full = "\n".join(lines)
    tokens = full.split()
    if len(tokens) <= token_budget:
        return ContextWindow(text=full, token_budget=token_budget, truncated=False)
    kept = tokens[-token_budget:]
    return ContextWindow(text=" ".join(kept), token_budget=token_budget, truncated=True)
