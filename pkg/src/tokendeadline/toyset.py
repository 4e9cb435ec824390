"""Bundled 20-question arithmetic dataset wired to scripted mock personas.

Questions span forced difficulty levels: compliant personas answer early and
always, overthinkers bury a (sometimes wrong) answer in seeded rambling, and
two questions are never answered at all so the fallback budget path gets
exercised. Wrong-answer rates are seeded per episode, so repeated sampling
yields fractional difficulty scores.
"""

from __future__ import annotations

from pathlib import Path

from .adapters import MockScript, ScriptedMockModel
from .records import Question, save_questions

TOY_DATASET_NAME = "toy20"

# id, expression, gold, persona, answer_position, wrong_rate, ramble, jitter
_TOY_ROWS = (
    ("toy-01", "12 + 7", "19", "compliant", 14, 0.0, None, 0),
    ("toy-02", "30 - 4", "26", "compliant", 22, 0.0, None, 0),
    ("toy-03", "6 * 7", "42", "compliant", 31, 0.0, None, 0),
    ("toy-04", "81 / 9", "9", "compliant", 45, 0.1, None, 0),
    ("toy-05", "15 + 28", "43", "compliant", 58, 0.15, None, 0),
    ("toy-06", "144 / 12", "12", "compliant", 74, 0.2, None, 0),
    ("toy-07", "17 * 3", "51", "overthinker", 95, 0.25, 700, 160),
    ("toy-08", "208 - 76", "132", "overthinker", 120, 0.3, 900, 200),
    ("toy-09", "45 + 67", "112", "overthinker", 150, 0.35, 1100, 240),
    ("toy-10", "19 * 6", "114", "overthinker", 185, 0.4, 1300, 260),
    ("toy-11", "512 / 8", "64", "overthinker", 220, 0.45, 1500, 300),
    ("toy-12", "93 - 38", "55", "overthinker", 260, 0.5, 1700, 320),
    ("toy-13", "24 * 9", "216", "overthinker", 310, 0.55, 1900, 340),
    ("toy-14", "301 + 199", "500", "overthinker", 360, 0.6, 2100, 360),
    ("toy-15", "84 / 7", "12", "overthinker", 420, 0.65, 2400, 380),
    ("toy-16", "37 * 8", "296", "overthinker", 480, 0.7, 2700, 400),
    ("toy-17", "625 - 288", "337", "overthinker", 550, 0.8, 3000, 420),
    ("toy-18", "53 * 11", "583", "overthinker", 630, 0.9, 3400, 440),
    ("toy-19", "777 + 446", "1223", "never-answers", 0, 1.0, 4200, 300),
    ("toy-20", "912 / 3", "304", "never-answers", 0, 1.0, 4200, 300),
)


def _prompt(expression: str) -> str:
    return f"Compute {expression} and state the result."


def toy_questions() -> list[Question]:
    return [
        Question(
            id=row[0],
            prompt=_prompt(row[1]),
            gold=row[2],
            grading="exact-math",
            dataset=TOY_DATASET_NAME,
        )
        for row in _TOY_ROWS
    ]


def toy_scripts() -> dict[str, MockScript]:
    """Persona script per question, keyed by the question's prompt text."""
    scripts: dict[str, MockScript] = {}
    for index, (qid, expression, gold, persona, position, wrong, ramble, jitter) in enumerate(
        _TOY_ROWS
    ):
        scripts[_prompt(expression)] = MockScript(
            persona=persona,
            answer_text=gold if persona != "never-answers" else "",
            answer_position=position,
            seed=index + 1,
            post_reminder="answers-promptly" if persona == "compliant" else "ignores",
            wrong_answer_rate=0.0 if persona == "never-answers" else wrong,
            ramble_tokens=ramble,
            ramble_jitter=jitter,
        )
    return scripts


def toy_model(model_id: str = "mock-toy") -> ScriptedMockModel:
    return ScriptedMockModel(toy_scripts(), model_id=model_id)


def write_toy_dataset(path: str | Path) -> None:
    save_questions(toy_questions(), path)
