"""Per-user preference extraction through a frozen LLM.

Rendering is a pure function: the prompt has five fixed sections (Task, Role,
Requirements, Standard Template, Historical Interaction Sequence) with the
user's training-prefix titles injected in order. Responses must follow the
numbered Standard Template exactly; anything else is a MalformedResponse. A
user whose responses stay malformed after the client's retry budget is flagged
dropped — recorded, never silently lost.

Cache format: JSONL, one record per user with
{user_id, preferences[], source, raw_response, prompt_hash}.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path

from .errors import MalformedResponse
from .llm import LlmClient

MAX_PREFERENCE_CHARS = 200


@dataclass(frozen=True)
class PreferenceSet:
    user_id: str
    preferences: tuple[str, ...]
    source: str  # llm | mock | manual
    raw_response: str = ""
    prompt_hash: str = ""

    def __post_init__(self):
        for p in self.preferences:
            if not p.strip():
                raise ValueError(f"user {self.user_id!r}: blank preference")
            if len(p) > MAX_PREFERENCE_CHARS:
                raise ValueError(f"user {self.user_id!r}: preference longer than {MAX_PREFERENCE_CHARS} chars")


def render_preference_prompt(titles: list[str], m: int) -> str:
    """Zero-shot extraction prompt; byte-identical output for identical inputs."""
    if not titles:
        raise ValueError("titles must be nonempty")
    if m < 1:
        raise ValueError("m must be positive")
    template_lines = "\n".join(f"{i}. <preference {i}>" for i in range(1, m + 1))
    title_lines = "\n".join(f"- {t}" for t in titles)
    return (
        "Task:\n"
        f"Analyze the user's historical interaction sequence below and summarize the user's "
        f"tastes into {m} short preference statements.\n"
        "\n"
        "Role:\n"
        "You are a seasoned expert in analyzing and capturing user preferences.\n"
        "\n"
        "Requirements:\n"
        "- Ground every preference in the listed items; you may supplement related item "
        "information from your own knowledge.\n"
        f"- Make the {m} preferences diverse, covering different aspects of the user's tastes.\n"
        f"- Each preference is one short phrase of at most {MAX_PREFERENCE_CHARS} characters.\n"
        "- Reply with the numbered list of the Standard Template and nothing else.\n"
        "\n"
        "Standard Template:\n"
        f"{template_lines}\n"
        "\n"
        "Historical Interaction Sequence:\n"
        f"{title_lines}\n"
    )


_NUMBERED = re.compile(r"^\s*(\d+)[.)]\s*(.+?)\s*$")


def parse_preference_response(raw: str, m: int) -> list[str]:
    """Extract exactly m numbered preferences; reject anything off-template."""
    if not raw or not raw.strip():
        raise MalformedResponse("empty response")
    found: list[str] = []
    for line in raw.splitlines():
        if not line.strip():
            continue
        match = _NUMBERED.match(line)
        if match is None:
            continue
        text = match.group(2).strip().strip("*_`").strip()
        if text:
            found.append(text)
    if len(found) != m:
        raise MalformedResponse(f"expected {m} numbered preferences, found {len(found)}")
    for text in found:
        if len(text) > MAX_PREFERENCE_CHARS:
            raise MalformedResponse(f"preference exceeds {MAX_PREFERENCE_CHARS} characters: {text[:40]!r}...")
    return found


def prompt_hash(prompt: str) -> str:
    return hashlib.sha1(prompt.encode("utf-8")).hexdigest()


def extract_preferences(
    user_id: str,
    titles: list[str],
    client: LlmClient,
    m: int,
    cache: "PreferenceCache | None" = None,
) -> PreferenceSet | None:
    """Prompt -> client -> strict parse, with the client's retry budget.

    Returns the PreferenceSet, or None when every attempt was malformed; in
    that case the user is recorded as dropped in the cache. Cached users are
    served without any client call.
    """
    if cache is not None:
        hit = cache.get(user_id)
        if hit is not None:
            return hit
        if cache.is_dropped(user_id):
            return None

    prompt = render_preference_prompt(titles, m)
    attempts = max(1, client.max_retries)
    last_error = ""
    for _ in range(attempts):
        raw = client.complete(prompt)
        try:
            prefs = parse_preference_response(raw, m)
        except MalformedResponse as exc:
            last_error = str(exc)
            continue
        result = PreferenceSet(
            user_id=user_id,
            preferences=tuple(prefs),
            source="mock" if client.name == "mock" else "llm",
            raw_response=raw,
            prompt_hash=prompt_hash(prompt),
        )
        if cache is not None:
            cache.put(result)
        return result

    if cache is not None:
        cache.mark_dropped(user_id, reason=last_error)
    return None


class PreferenceCache:
    """JSONL-backed store of extracted preferences plus the dropped-user list."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.path = self.directory / "preferences.jsonl"
        self.dropped_path = self.directory / "dropped.jsonl"
        self._records: dict[str, PreferenceSet] = {}
        self._dropped: dict[str, str] = {}
        self._load()

    def _load(self) -> None:
        if self.path.exists():
            with self.path.open("r", encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self._records[rec["user_id"]] = PreferenceSet(
                            user_id=rec["user_id"],
                            preferences=tuple(rec["preferences"]),
                            source=rec["source"],
                            raw_response=rec.get("raw_response", ""),
                            prompt_hash=rec.get("prompt_hash", ""),
                        )
        if self.dropped_path.exists():
            with self.dropped_path.open("r", encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self._dropped[rec["user_id"]] = rec.get("reason", "")

    def get(self, user_id: str) -> PreferenceSet | None:
        return self._records.get(user_id)

    def is_dropped(self, user_id: str) -> bool:
        return user_id in self._dropped

    def dropped_users(self) -> dict[str, str]:
        return dict(self._dropped)

    def users(self) -> list[str]:
        return list(self._records)

    def put(self, record: PreferenceSet) -> None:
        if record.user_id in self._records:
            return
        self._records[record.user_id] = record
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(
                json.dumps(
                    {
                        "user_id": record.user_id,
                        "preferences": list(record.preferences),
                        "source": record.source,
                        "raw_response": record.raw_response,
                        "prompt_hash": record.prompt_hash,
                    }
                )
                + "\n"
            )

    def mark_dropped(self, user_id: str, reason: str = "") -> None:
        if user_id in self._dropped:
            return
        self._dropped[user_id] = reason
        with self.dropped_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps({"user_id": user_id, "reason": reason}) + "\n")
