from datetime import datetime, timezone

import pytest

from engage.convlog import ChatResponse, Conversation, Turn

START = datetime(2023, 1, 1, tzinfo=timezone.utc)


def make_conversation(n_turns, conv_id="c1", user_id="u1", regenerated=None,
                      stars=None):
    """Quick conversation factory; regenerated/stars are per-turn lists."""
    regenerated = regenerated or [False] * n_turns
    stars = stars or [None] * n_turns
    turns = tuple(
        Turn(f"user message {i}",
             ChatResponse(f"bot reply {i}", regenerated[i - 1], stars[i - 1]))
        for i in range(1, n_turns + 1)
    )
    return Conversation(id=conv_id, user_id=user_id, character_id="ch1",
                        started_at=START, turns=turns)


def conversations_of_lengths(lengths):
    return [make_conversation(n, conv_id=f"c{i}") for i, n in enumerate(lengths)]


@pytest.fixture
def three_turn_conversation():
    return make_conversation(3)
