"""Explanation generation through a four-step chain-of-thought prompt.

The prompt walks the LLM through: (1) where each preference came from in the
interaction sequence, (2) the target item and a 0..1 fitness per preference,
(3) an overall interaction probability (Low/Medium/High), (4) a personalized
recommendation text. Preferences are injected together with their attention
weights rounded to 4 decimals, and the response template makes the model echo
those weights back, which lets us verify the reply quantitatively.

This is a pure output head: nothing here touches model parameters or metrics.
Explanations are persisted as JSONL records
{user_id, target, omega[], steps{}, raw, prompt_hash}; a reply that stays
unparseable after the retry budget is recorded as unavailable, never invented.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MalformedResponse
from .llm import LlmClient
from .preferences import prompt_hash

PROBABILITY_LABELS = ("Low", "Medium", "High")


@dataclass(frozen=True)
class PreferenceAnalysis:
    preference: str
    analysis: str


@dataclass(frozen=True)
class FitnessEntry:
    preference: str
    fitness: float
    reason: str
    clamped: bool = False


@dataclass
class ExplanationRecord:
    step1: list[PreferenceAnalysis]
    intro: str
    step2: list[FitnessEntry]
    probability: str
    probability_reason: str
    recommendation: str
    echoed_weights: list[float]
    raw: str = ""

    def steps_dict(self) -> dict:
        return {
            "step1": [{"preference": a.preference, "analysis": a.analysis} for a in self.step1],
            "step2": {
                "introduction": self.intro,
                "fitness": [
                    {
                        "preference": e.preference,
                        "fitness": e.fitness,
                        "reason": e.reason,
                        "clamped": e.clamped,
                    }
                    for e in self.step2
                ],
            },
            "step3": {"probability": self.probability, "reason": self.probability_reason},
            "step4": {"recommendation": self.recommendation},
        }


def render_cot_prompt(
    titles: list[str],
    preferences: list[str],
    omega: np.ndarray | list[float],
    target_title: str,
) -> str:
    """Four-step explanation prompt; pure function of its inputs."""
    omega = np.asarray(omega, dtype=np.float64).reshape(-1)
    if len(preferences) != len(omega):
        raise ValueError(f"{len(preferences)} preferences but {len(omega)} weights")
    if not titles:
        raise ValueError("titles must be nonempty")
    if not target_title:
        raise ValueError("target_title must be nonempty")

    pref_lines = "\n".join(f"- {p} (weight: {w:.4f})" for p, w in zip(preferences, omega))
    title_lines = "\n".join(f"- {t}" for t in titles)
    return (
        "You are a recommendation assistant explaining why an item suits a user. "
        "Work through the four steps below in order and follow the Response Template exactly.\n"
        "\n"
        "Step 1: For each user preference listed below, explain which items in the interaction "
        "sequence gave rise to it. Restate each preference together with its weight.\n"
        "Step 2: Introduce the target item, then rate how well it fits each preference with a "
        "fitness score between 0 and 1, giving a reason per preference.\n"
        "Step 3: Combining the preference weights with the fitness scores, state the probability "
        "(Low, Medium or High) that the user will interact with the target item, with a reason.\n"
        "Step 4: Write a short personalized recommendation text for the user.\n"
        "\n"
        "Response Template:\n"
        "Step 1:\n"
        "Preference 1: <preference>\n"
        "Weight: <weight>\n"
        "Analysis: <text>\n"
        "(repeat for every preference)\n"
        "Step 2:\n"
        "Target item introduction: <text>\n"
        "Preference Fitness:\n"
        "1. <preference>: <fitness>\n"
        "Reason: <text>\n"
        "(repeat for every preference)\n"
        "Step 3:\n"
        "Interaction probability: <Low|Medium|High>\n"
        "Reason: <text>\n"
        "Step 4:\n"
        "Recommendation: <text>\n"
        "\n"
        "User preferences (with attention weights):\n"
        f"{pref_lines}\n"
        "\n"
        "Interaction sequence:\n"
        f"{title_lines}\n"
        "\n"
        "Target item:\n"
        f"{target_title}\n"
    )


_STEP_HEADER = re.compile(r"^Step ([1-4]):\s*$", re.MULTILINE)


def _split_steps(raw: str) -> dict[int, str]:
    sections: dict[int, str] = {}
    matches = list(_STEP_HEADER.finditer(raw))
    for i, match in enumerate(matches):
        start = match.end()
        end = matches[i + 1].start() if i + 1 < len(matches) else len(raw)
        sections[int(match.group(1))] = raw[start:end].strip("\n")
    return sections


def _field(section: str, label: str) -> str | None:
    match = re.search(rf"^{re.escape(label)}:\s*(.*)$", section, re.MULTILINE)
    return match.group(1).strip() if match else None


def parse_explanation(raw: str, m: int) -> ExplanationRecord:
    """Section-header-driven parse of the four-step reply."""
    if not raw or not raw.strip():
        raise MalformedResponse("empty response")
    sections = _split_steps(raw)
    for step in (1, 2, 3, 4):
        if step not in sections:
            raise MalformedResponse(f"Step {step}")

    # Step 1: m (preference, weight, analysis) triples
    triples = re.findall(
        r"^Preference \d+:\s*(.+?)\s*$\n^Weight:\s*([0-9.]+)\s*$\n^Analysis:\s*(.+?)\s*$",
        sections[1],
        re.MULTILINE,
    )
    if len(triples) != m:
        raise MalformedResponse(f"Step 1: expected {m} preference analyses, found {len(triples)}")
    step1 = [PreferenceAnalysis(preference=p, analysis=a) for p, _, a in triples]
    echoed_weights = [float(w) for _, w, _ in triples]

    # Step 2: introduction plus m fitness entries
    intro = _field(sections[2], "Target item introduction")
    if intro is None:
        raise MalformedResponse("Step 2: missing target item introduction")
    entries = re.findall(
        r"^\d+\.\s*(.+):\s*([0-9]*\.?[0-9]+)\s*$\n^Reason:\s*(.+?)\s*$",
        sections[2],
        re.MULTILINE,
    )
    if len(entries) != m:
        raise MalformedResponse(f"Step 2: expected {m} fitness entries, found {len(entries)}")
    step2 = []
    for pref, fit_raw, reason in entries:
        fit = float(fit_raw)
        clamped = fit < 0.0 or fit > 1.0
        step2.append(
            FitnessEntry(preference=pref, fitness=min(1.0, max(0.0, fit)), reason=reason, clamped=clamped)
        )

    # Step 3: label + reason
    label = _field(sections[3], "Interaction probability")
    if label is None or label not in PROBABILITY_LABELS:
        raise MalformedResponse(f"Step 3: probability label must be one of {PROBABILITY_LABELS}")
    reason = _field(sections[3], "Reason") or ""

    # Step 4: recommendation text
    rec = _field(sections[4], "Recommendation")
    if not rec:
        raise MalformedResponse("Step 4: missing recommendation text")

    return ExplanationRecord(
        step1=step1,
        intro=intro,
        step2=step2,
        probability=label,
        probability_reason=reason,
        recommendation=rec,
        echoed_weights=echoed_weights,
        raw=raw,
    )


def generate_explanation(
    user_id: str,
    titles: list[str],
    preferences: list[str],
    omega: np.ndarray | list[float],
    target_title: str,
    client: LlmClient,
    store: "ExplanationStore | None" = None,
    target_id: str = "",
) -> ExplanationRecord | None:
    """Render -> client -> parse with retries; None when no reply parses.

    The reply's echoed weights must match the omega passed in to within 1e-4,
    otherwise the attempt counts as malformed.
    """
    omega = np.asarray(omega, dtype=np.float64).reshape(-1)
    prompt = render_cot_prompt(titles, preferences, omega, target_title)
    attempts = max(1, client.max_retries)
    record = None
    for _ in range(attempts):
        raw = client.complete(prompt)
        try:
            parsed = parse_explanation(raw, len(preferences))
        except MalformedResponse:
            continue
        if np.max(np.abs(np.asarray(parsed.echoed_weights) - omega)) > 1e-4:
            continue
        record = parsed
        break

    if store is not None:
        store.append(
            user_id=user_id,
            target=target_id or target_title,
            omega=[float(w) for w in omega],
            record=record,
            prompt=prompt,
        )
    return record


class ExplanationStore:
    """Append-only JSONL sink for generated explanations."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(
        self,
        user_id: str,
        target: str,
        omega: list[float],
        record: ExplanationRecord | None,
        prompt: str,
    ) -> None:
        row = {
            "user_id": user_id,
            "target": target,
            "omega": omega,
            "steps": record.steps_dict() if record else None,
            "raw": record.raw if record else None,
            "available": record is not None,
            "prompt_hash": prompt_hash(prompt),
        }
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(row) + "\n")

    def load(self) -> list[dict]:
        if not self.path.exists():
            return []
        with self.path.open("r", encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]
