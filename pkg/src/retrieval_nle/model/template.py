"""The unified ``the answer is <answer> because <explanation>`` sentence."""

from __future__ import annotations

from typing import NamedTuple

from retrieval_nle.errors import ValidationError

ANSWER_PREFIX = "the answer is "
BECAUSE = " because "


class ParsedPrediction(NamedTuple):
    answer: str
    explanation: str
    wellformed: bool


def template_violation(answer: str, explanation: str) -> str | None:
    """Reason why the pair cannot be templated unambiguously, or ``None``."""
    if not answer.strip():
        return "empty answer"
    if not explanation.strip():
        return "empty explanation"
    for name, text in (("answer", answer), ("explanation", explanation)):
        if ANSWER_PREFIX.strip() in text:
            return f"{name} contains the phrase 'the answer is'"
        if BECAUSE in text:
            return f"{name} contains ' because '"
    # a suffix such as " because" would fuse with the delimiter
    if (answer + BECAUSE).find(BECAUSE) != len(answer):
        return "answer runs into the ' because ' delimiter"
    return None


def format_target(answer: str, explanation: str) -> str:
    problem = template_violation(answer, explanation)
    if problem:
        raise ValidationError(problem)
    return f"{ANSWER_PREFIX}{answer}{BECAUSE}{explanation}"


def parse_prediction(text: str) -> ParsedPrediction:
    start = text.find(ANSWER_PREFIX)
    if start < 0:
        return ParsedPrediction(text, "", False)
    rest = text[start + len(ANSWER_PREFIX):]
    cut = rest.find(BECAUSE)
    if cut < 0:
        return ParsedPrediction(text, "", False)
    return ParsedPrediction(rest[:cut], rest[cut + len(BECAUSE):], True)
