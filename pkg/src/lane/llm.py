"""LLM client handles.

The package never tunes a language model; it only sends prompts and parses
replies. ``MockLlmClient`` is a pure function of (prompt, seed) so the whole
pipeline runs deterministically offline: it recognizes the two prompt layouts
produced by this package (preference extraction and four-step explanation) and
answers them from data embedded in the prompt itself. ``HttpLlmClient`` talks
to an OpenAI-compatible chat endpoint with the key from $LANE_LLM_API_KEY.
"""

from __future__ import annotations

import hashlib
import os
import re
import time

import numpy as np

STOPWORDS = frozenset(
    """a an and are as at be by for from has have in is it its of on or that the
    this to was were will with you your edition deluxe volume part sequel
    collection""".split()
)

_PREFERENCE_PATTERNS = (
    "Strong interest in {w}-related items",
    "Preference for {w}-themed content",
    "Enjoys titles featuring {w}",
    "Drawn to {w} experiences",
    "Frequently picks items about {w}",
)


class LlmClient:
    """Base client: complete(prompt) -> raw response text."""

    name: str = "base"
    max_retries: int = 2
    timeout: float = 30.0

    def complete(self, prompt: str) -> str:
        raise NotImplementedError


def _content_words(titles: list[str]) -> list[str]:
    """Content words across titles, most frequent first, ties by first sighting."""
    counts: dict[str, int] = {}
    order: dict[str, int] = {}
    for title in titles:
        for word in re.findall(r"[a-z0-9]+", title.lower()):
            if len(word) < 3 or word in STOPWORDS:
                continue
            if word not in counts:
                order[word] = len(order)
            counts[word] = counts.get(word, 0) + 1
    return sorted(counts, key=lambda w: (-counts[w], order[w]))


def mock_preferences(titles: list[str], m: int, seed: int = 0) -> list[str]:
    """Deterministic preference phrases built from the titles' frequent words."""
    words = _content_words(titles)
    prefs = []
    for i in range(m):
        if i < len(words):
            pattern = _PREFERENCE_PATTERNS[(seed + i) % len(_PREFERENCE_PATTERNS)]
            prefs.append(pattern.format(w=words[i]))
        else:
            prefs.append(f"Broad taste across varied items (aspect {i + 1})")
    return prefs


def _unit_float(*parts: str) -> float:
    """Stable pseudo-random float in [0, 1] from the given strings."""
    digest = hashlib.blake2b("|".join(parts).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") / float(2**64)


class MockLlmClient(LlmClient):
    """Offline stand-in: deterministic completion derived from the prompt."""

    name = "mock"

    def __init__(self, seed: int = 0, max_retries: int = 2):
        self.seed = seed
        self.max_retries = max_retries

    def complete(self, prompt: str) -> str:
        if "Historical Interaction Sequence:" in prompt and "Standard Template:" in prompt:
            return self._complete_preferences(prompt)
        if "Interaction probability" in prompt and "Target item:" in prompt:
            return self._complete_explanation(prompt)
        raise ValueError("mock client does not recognize this prompt layout")

    # -- preference extraction -------------------------------------------------

    def _complete_preferences(self, prompt: str) -> str:
        m_match = re.search(r"into (\d+) short preference statements", prompt)
        m = int(m_match.group(1)) if m_match else 5
        titles = _titles_after(prompt, "Historical Interaction Sequence:")
        prefs = mock_preferences(titles, m, seed=self.seed)
        return "\n".join(f"{i + 1}. {p}" for i, p in enumerate(prefs))

    # -- explanation -----------------------------------------------------------

    def _complete_explanation(self, prompt: str) -> str:
        pairs = re.findall(r"^- (.+) \(weight: ([0-9.]+)\)$", prompt, flags=re.MULTILINE)
        titles = _titles_after(prompt, "Interaction sequence:")
        target = _line_after(prompt, "Target item:")

        lines = ["Step 1:"]
        for i, (pref, weight) in enumerate(pairs):
            cited = titles[i % len(titles)] if titles else "the listed items"
            lines += [
                f"Preference {i + 1}: {pref}",
                f"Weight: {weight}",
                f"Analysis: Items such as '{cited}' in the sequence point to this preference.",
            ]

        lines += ["", "Step 2:", f"Target item introduction: '{target}' is an item whose themes overlap the user's history.", "Preference Fitness:"]
        fits = []
        for i, (pref, _) in enumerate(pairs):
            fit = round(_unit_float(str(self.seed), pref, target), 2)
            fits.append(fit)
            lines += [
                f"{i + 1}. {pref}: {fit}",
                f"Reason: The target item {'matches' if fit >= 0.5 else 'only loosely matches'} this preference.",
            ]

        score = float(np.dot([float(w) for _, w in pairs], fits)) if pairs else 0.0
        label = "High" if score > 0.66 else ("Medium" if score > 0.33 else "Low")
        lines += [
            "",
            "Step 3:",
            f"Interaction probability: {label}",
            f"Reason: The weighted preference fitness comes to {score:.2f}.",
            "",
            "Step 4:",
            f"Recommendation: Given your tastes, '{target}' looks like a fitting next pick"
            f"{(', especially for its ' + pairs[0][0].lower()) if pairs else ''}.",
        ]
        return "\n".join(lines)


def _titles_after(prompt: str, header: str) -> list[str]:
    section = prompt.split(header, 1)[-1]
    titles = []
    for line in section.splitlines():
        line = line.strip()
        if line.startswith("- "):
            titles.append(line[2:])
        elif titles and line and not line.startswith("- "):
            break
    return titles


def _line_after(prompt: str, header: str) -> str:
    section = prompt.split(header, 1)[-1]
    for line in section.splitlines():
        if line.strip():
            return line.strip()
    return ""


class HttpLlmClient(LlmClient):
    """OpenAI-compatible chat-completions client with a simple rate limiter."""

    def __init__(
        self,
        model: str,
        base_url: str = "https://api.openai.com/v1",
        rate_limit: float = 1.0,
        max_retries: int = 2,
        timeout: float = 60.0,
    ):
        self.name = model
        self.model = model
        self.base_url = base_url.rstrip("/")
        self.rate_limit = rate_limit
        self.max_retries = max_retries
        self.timeout = timeout
        self._last_call = 0.0

    def complete(self, prompt: str) -> str:
        import requests

        api_key = os.environ.get("LANE_LLM_API_KEY")
        if not api_key:
            raise RuntimeError("LANE_LLM_API_KEY is not set")
        if self.rate_limit > 0:
            wait = self._last_call + 1.0 / self.rate_limit - time.monotonic()
            if wait > 0:
                time.sleep(wait)
        self._last_call = time.monotonic()
        resp = requests.post(
            f"{self.base_url}/chat/completions",
            headers={"Authorization": f"Bearer {api_key}"},
            json={
                "model": self.model,
                "messages": [{"role": "user", "content": prompt}],
                "temperature": 0,
            },
            timeout=self.timeout,
        )
        resp.raise_for_status()
        return resp.json()["choices"][0]["message"]["content"]


def build_llm_client(name: str, seed: int = 0, rate_limit: float = 1.0, max_retries: int = 2) -> LlmClient:
    if name == "mock":
        return MockLlmClient(seed=seed, max_retries=max_retries)
    return HttpLlmClient(model=name, rate_limit=rate_limit, max_retries=max_retries)
