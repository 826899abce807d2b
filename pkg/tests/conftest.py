import numpy as np
import pytest

from owsm_kit.bpe import train_bpe
from owsm_kit.tokens import MultitaskRecord, build_vocabulary

# 30 s window of a recorded talk, split into three timestamped sentences
TALK_SEGMENTS = [
    (0.00, "I'm going to talk today about energy and climate.", 3.52),
    (
        4.26,
        "And that might seem a bit surprising, because my full-time work at the foundation "
        "is mostly about vaccines and seeds, about the things that we need to invent and "
        "deliver to help the poorest two billion live better lives.",
        18.40,
    ),
    (
        19.62,
        "But energy and climate are extremely important to these people, in fact more "
        "important than to anyone else on the planet.",
        28.52,
    ),
]

EXTRA_LINES = [
    "Several years ago here at the conference a design challenge was introduced.",
    "Teams of four have to build the tallest structure out of sticks of spaghetti.",
    "the cat sat on the mat and the dog sat on the log",
    "Zebras quickly jumped over 12 boxes; why? Xylophones!",
]


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: acceptance criterion check")


@pytest.fixture(scope="session")
def corpus():
    return [t for _, t, _ in TALK_SEGMENTS] + EXTRA_LINES


@pytest.fixture(scope="session")
def pieces(corpus):
    return train_bpe(corpus, 160)


@pytest.fixture(scope="session")
def vocab(pieces):
    return build_vocabulary(pieces, ["en", "de", "ja", "zh"], ["de", "en", "ja"])


@pytest.fixture(scope="session")
def talk_record():
    return MultitaskRecord("en", segments=TALK_SEGMENTS)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


SECOND_WINDOW = [
    (0.00, "Several years ago here at the conference a design challenge was introduced.", 12.30),
    (13.00, "Teams of four have to build the tallest structure out of sticks of spaghetti.", 29.00),
]


def scenario_90s(pieces):
    """90 s of audio; windows end at 28.52 and 29.00, the third predicts nothing."""
    return {
        "duration": 90.0,
        "language": "en",
        "vocab": {"pieces": list(pieces), "languages": ["en", "de", "ja", "zh"], "st_targets": ["de", "en", "ja"]},
        "chunks": [
            {"cursor": 0.0, "segments": [list(s) for s in TALK_SEGMENTS]},
            {"cursor": 28.52, "segments": [list(s) for s in SECOND_WINDOW]},
            {"cursor": 57.52, "segments": []},
        ],
        "expected_cursors": [0.0, 28.52, 57.52],
        "expected_text": " ".join(t for _, t, _ in TALK_SEGMENTS + SECOND_WINDOW),
    }


@pytest.fixture(scope="session")
def scenario_obj(pieces):
    return scenario_90s(pieces)


# acceptance bookkeeping: one line per criterion, all of its tests must pass
_ACCEPTANCE: dict[str, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    key, title = mark.args
    entry = _ACCEPTANCE.setdefault(key, {"title": title, "ok": True, "details": []})
    entry["ok"] = entry["ok"] and not rep.failed
    if rep.when == "call":
        entry["details"] += [str(v) for k, v in item.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=lambda k: int(k[2:])):
        e = _ACCEPTANCE[key]
        detail = f" ({'; '.join(e['details'])})" if e["details"] else ""
        terminalreporter.write_line(f"{'PASS' if e['ok'] else 'FAIL'} {key} {e['title']}{detail}")
