"""Shared builders for scripted instances and readers."""

from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import pytest

from passagelab.datamodel import Passage, QAInstance
from passagelab.gateway import MockReader

FIXTURES = Path(__file__).parent / "fixtures"


def make_instance(
    instance_id: str = "i0",
    question: str = "what is the answer?",
    golds: tuple[str, ...] = ("the answer",),
    texts: tuple[str, ...] = ("passage one", "passage two", "passage three"),
) -> QAInstance:
    return QAInstance(
        instance_id=instance_id,
        question=question,
        gold_answers=golds,
        contexts=tuple(
            Passage(id=f"{instance_id}-p{i}", title=f"title {i}", text=t)
            for i, t in enumerate(texts)
        ),
    )


def scripted_pattern(
    bits: str,
    gold: str = "gold answer",
    instance_id: str = "i0",
    wrong_in_text: bool = False,
) -> tuple[QAInstance, MockReader]:
    """Build an instance + mock whose incremental EM pattern is exactly ``bits``.

    Every 0/1 transition plants a fresh marker in that passage; markers
    introduced later outrank earlier ones in the mock's precedence table, so
    the prefix answer always reflects the latest transition. The answer is
    a pure function of the passage multiset, so the mock stays order
    invariant. With ``wrong_in_text`` the wrong answers also appear
    verbatim in their passage's visible text.
    """
    markers: list[tuple[str, str]] = []
    passages = []
    prev = "0"
    for i, b in enumerate(bits):
        text = f"{instance_id} filler body number {i}"
        if b != prev:
            marker = f"XM{instance_id}N{i}X"
            if b == "1":
                answer = gold
            else:
                answer = f"offtrack {instance_id} {i}"
                if wrong_in_text:
                    text += f" mentions {answer} here"
            markers.append((marker, answer))
            text += f" {marker}"
        passages.append(Passage(id=f"{instance_id}-p{i}", title=f"title {i}", text=text))
        prev = b
    markers.reverse()  # newest transition takes precedence
    mock = MockReader(markers=markers, default_answer="no idea")
    instance = QAInstance(
        instance_id=instance_id,
        question=f"question for {instance_id}?",
        gold_answers=(gold,),
        contexts=tuple(passages),
    )
    return instance, mock


@pytest.fixture
def answer_mock() -> MockReader:
    """Echo-style mock extracting ANSWER:<token> markers from passage text."""
    return MockReader(extract_prefix="ANSWER:", default_answer="no idea")
