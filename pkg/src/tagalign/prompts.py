"""Fixed instruction and question texts shared by the LM corpus, stage-2 training and evaluation."""

from __future__ import annotations

from typing import Sequence

STAGE2_INSTRUCTION = "Please summarize the topics of this node and of its neighbors."

QUESTION_TEMPLATE = ("Question: which topic is this node about? Options: {options}. "
                     "The answer format is [X]. Answer:")


def render_options(labels: Sequence[str]) -> str:
    return "; ".join(f"[{i}] {name}" for i, name in enumerate(labels, start=1))


def render_zeroshot_prompt(labels: Sequence[str], template: str = QUESTION_TEMPLATE) -> str:
    """Instruction listing each label with its bracketed 1-based number, ending in ``Answer:``."""
    if not labels:
        raise ValueError("label set is empty")
    text = template.format(options=render_options(labels))
    if not text.rstrip().endswith("Answer:"):
        raise ValueError("zero-shot template must end with 'Answer:'")
    return text


def answer_token(k: int) -> str:
    """Completion text for 0-based label ``k``."""
    return f"[{k + 1}]"
