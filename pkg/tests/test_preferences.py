import pytest

from lane.errors import MalformedResponse
from lane.llm import LlmClient, MockLlmClient, mock_preferences
from lane.preferences import (
    PreferenceCache,
    PreferenceSet,
    extract_preferences,
    parse_preference_response,
    render_preference_prompt,
)

TITLES = ["Galaxy Chronicle 004", "Stealth Chronicle 013", "Puzzle Chronicle 021"]

SECTION_HEADERS = ["Task:", "Role:", "Requirements:", "Standard Template:", "Historical Interaction Sequence:"]


class CountingMock(MockLlmClient):
    def __init__(self, **kw):
        super().__init__(**kw)
        self.calls = 0

    def complete(self, prompt):
        self.calls += 1
        return super().complete(prompt)


class GarbageClient(LlmClient):
    name = "garbage"

    def __init__(self, max_retries=2):
        self.max_retries = max_retries
        self.calls = 0

    def complete(self, prompt):
        self.calls += 1
        return "no numbered list here, sorry"


class TestRenderPrompt:
    def test_contains_titles_and_section_headers(self):
        prompt = render_preference_prompt(TITLES, 5)
        for title in TITLES:
            assert title in prompt
        for header in SECTION_HEADERS:
            assert header in prompt

    def test_m_substituted_into_template(self):
        prompt = render_preference_prompt(TITLES, 5)
        assert "5 short preference statements" in prompt
        assert "5. <preference 5>" in prompt

    def test_m_one_single_slot(self):
        prompt = render_preference_prompt(TITLES, 1)
        assert "1. <preference 1>" in prompt
        assert "2. <preference 2>" not in prompt

    def test_pure_function(self):
        assert render_preference_prompt(TITLES, 3) == render_preference_prompt(TITLES, 3)

    def test_empty_titles_rejected(self):
        with pytest.raises(ValueError):
            render_preference_prompt([], 5)


class TestParseResponse:
    def test_fig_style_response(self):
        raw = (
            "1. Action-oriented gameplay\n"
            "2. Sci-fi themed titles\n"
            "3. Indie storytelling\n"
            "4. Puzzle and platform mechanics\n"
            "5. Strong narrative elements\n"
        )
        prefs = parse_preference_response(raw, 5)
        assert prefs[0] == "Action-oriented gameplay"
        assert len(prefs) == 5

    def test_wrong_count_rejected(self):
        raw = "1. one\n2. two\n3. three\n4. four\n"
        with pytest.raises(MalformedResponse, match="expected 5"):
            parse_preference_response(raw, 5)

    def test_empty_rejected(self):
        with pytest.raises(MalformedResponse):
            parse_preference_response("   \n", 5)

    def test_round_trip_of_synthetic_template(self):
        # self-inverse oracle: render a standard-template response from known
        # strings, parse it back, recover the strings
        known = ["enjoys racing", "collects maps", "prefers co-op", "likes lore", "seeks puzzles"]
        raw = "\n".join(f"{i + 1}. {p}" for i, p in enumerate(known))
        assert parse_preference_response(raw, 5) == known

    def test_strips_numbering_variants_and_markup(self):
        raw = "1) **bold pref**\n2. plain pref\n"
        assert parse_preference_response(raw, 2) == ["bold pref", "plain pref"]

    def test_overlong_preference_rejected(self):
        raw = f"1. {'x' * 201}\n"
        with pytest.raises(MalformedResponse, match="exceeds"):
            parse_preference_response(raw, 1)


class TestExtractPreferences:
    def test_mock_client_deterministic(self):
        a = extract_preferences("u1", TITLES, MockLlmClient(seed=1), 3)
        b = extract_preferences("u1", TITLES, MockLlmClient(seed=1), 3)
        assert a.preferences == b.preferences
        assert a.raw_response == b.raw_response
        assert a.source == "mock"
        assert len(a.preferences) == 3

    def test_mock_preferences_track_title_keywords(self):
        prefs = mock_preferences(TITLES, 2, seed=0)
        assert any("chronicle" in p for p in prefs)

    def test_cache_serves_second_call_without_client(self, tmp_path):
        cache = PreferenceCache(tmp_path / "prefs")
        client = CountingMock(seed=0)
        first = extract_preferences("u1", TITLES, client, 3, cache)
        calls_after_first = client.calls
        second = extract_preferences("u1", TITLES, client, 3, cache)
        assert client.calls == calls_after_first
        assert second.preferences == first.preferences

    def test_cache_survives_reload(self, tmp_path):
        cache = PreferenceCache(tmp_path / "prefs")
        extract_preferences("u1", TITLES, MockLlmClient(), 3, cache)
        reloaded = PreferenceCache(tmp_path / "prefs")
        assert reloaded.get("u1") is not None
        assert reloaded.get("u1").prompt_hash

    def test_garbage_twice_flags_dropped(self, tmp_path):
        cache = PreferenceCache(tmp_path / "prefs")
        client = GarbageClient(max_retries=2)
        result = extract_preferences("u9", TITLES, client, 5, cache)
        assert result is None
        assert client.calls == 2
        assert cache.is_dropped("u9")
        # dropped users are remembered, not retried
        again = extract_preferences("u9", TITLES, client, 5, cache)
        assert again is None and client.calls == 2

    def test_no_silent_losses(self, tmp_path):
        cache = PreferenceCache(tmp_path / "prefs")
        users = {f"u{k}": TITLES for k in range(6)}
        flaky = GarbageClient()
        good = MockLlmClient()
        for k, (user, titles) in enumerate(users.items()):
            extract_preferences(user, titles, flaky if k % 2 else good, 3, cache)
        covered = set(cache.users()) | set(cache.dropped_users())
        assert covered == set(users)


def test_preference_set_validates():
    with pytest.raises(ValueError, match="blank"):
        PreferenceSet(user_id="u", preferences=("ok", " "), source="mock")
    with pytest.raises(ValueError, match="longer"):
        PreferenceSet(user_id="u", preferences=("y" * 201,), source="mock")
