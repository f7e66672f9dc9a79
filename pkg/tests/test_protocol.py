import random
import string

import pytest

from graphmind.exceptions import MalformedBlockError
from graphmind.models import ControlSignal
from graphmind.protocol import (
    FINAL_ANSWER,
    QUERY_BEGIN,
    QUERY_END,
    RESULT_BEGIN,
    RESULT_END,
    detect_termination,
    extract_search_block,
    render_result_block,
    render_search_block,
    strip_final_marker,
)


def test_anchor_block():
    text = "I should check. <|KG_QUERY_BEGIN|>fatigue<|KG_QUERY_END|>"
    assert extract_search_block(text).mentions == ["fatigue"]


def test_bridge_block_trims_mentions():
    text = "<|KG_QUERY_BEGIN|> chronic fatigue syndrome | sleep recovery <|KG_QUERY_END|>"
    assert extract_search_block(text).mentions == ["chronic fatigue syndrome", "sleep recovery"]


def test_no_block():
    assert extract_search_block("Fatigue is common.") is None


def test_first_block_wins():
    text = f"{QUERY_BEGIN}a{QUERY_END} then {QUERY_BEGIN}b{QUERY_END}"
    assert extract_search_block(text).mentions == ["a"]


@pytest.mark.parametrize(
    "text",
    [
        f"{QUERY_BEGIN}a|b|c{QUERY_END}",
        f"{QUERY_BEGIN}{QUERY_END}",
        f"{QUERY_BEGIN}  {QUERY_END}",
        f"{QUERY_BEGIN}a|{QUERY_END}",
        f"{QUERY_BEGIN}fatigue",
    ],
)
def test_malformed_blocks(text):
    with pytest.raises(MalformedBlockError):
        extract_search_block(text)


def test_nested_begin_uses_inner_block():
    text = f"{QUERY_BEGIN}stray {QUERY_BEGIN}fatigue{QUERY_END}"
    assert extract_search_block(text).mentions == ["fatigue"]


def test_malformed_then_wellformed():
    text = f"{QUERY_BEGIN}a|b|c{QUERY_END} {QUERY_BEGIN}anemia{QUERY_END}"
    assert extract_search_block(text).mentions == ["anemia"]


def _random_mention(rng):
    alphabet = string.ascii_letters + string.digits + " -'(),."
    return "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 25))).strip() or "x"


@pytest.mark.parametrize("seed", range(10))
def test_rendered_blocks_read_back_from_prose(seed):
    rng = random.Random(seed)
    for _ in range(100):
        mentions = [_random_mention(rng) for _ in range(rng.randint(1, 2))]
        text = "Thinking about it. " + render_search_block(mentions) + " Let me wait."
        assert extract_search_block(text).mentions == mentions


def _malformed_block(rng):
    kind = rng.choice(["empty", "too_many", "unclosed"])
    if kind == "empty":
        return QUERY_BEGIN + rng.choice(["", " " * rng.randint(1, 5), "|", " | "]) + QUERY_END
    if kind == "too_many":
        mentions = [_random_mention(rng) for _ in range(rng.randint(3, 6))]
        return QUERY_BEGIN + "|".join(mentions) + QUERY_END
    mentions = [_random_mention(rng) for _ in range(rng.randint(1, 2))]
    return QUERY_BEGIN + "|".join(mentions)


@pytest.mark.parametrize("seed", range(10))
def test_generated_malformed_blocks_are_rejected(seed):
    rng = random.Random(1000 + seed)
    for _ in range(100):
        text = "Thinking about it. " + _malformed_block(rng) + " Let me wait."
        with pytest.raises(MalformedBlockError):
            extract_search_block(text)


def test_render_rejects_reserved_tokens():
    with pytest.raises(MalformedBlockError):
        render_search_block(["a|b"])
    with pytest.raises(MalformedBlockError):
        render_search_block([f"x{QUERY_END}"])
    with pytest.raises(MalformedBlockError):
        render_search_block(["a", "b", "c"])


# termination


@pytest.mark.parametrize(
    "text, done",
    [
        ("Here is what I found. <|FINAL_ANSWER|> CFS.", True),
        ("Plain prose, no query.", True),
        (f"{QUERY_BEGIN}fatigue{QUERY_END}", False),
        (f"{QUERY_BEGIN}fatigue{QUERY_END} {FINAL_ANSWER}", True),
        ("", True),
    ],
)
def test_detect_termination(text, done):
    assert detect_termination(text) is done


def test_strip_final_marker():
    assert strip_final_marker(f"notes {FINAL_ANSWER} first {FINAL_ANSWER}  last ") == "last"
    assert strip_final_marker("  plain ") == "plain"


# result blocks


def test_result_block_facts():
    block = render_result_block(["Anemia has symptom Fatigue", "Diabetes has symptom Fatigue"])
    assert block == (
        f"{RESULT_BEGIN}\nAnemia has symptom Fatigue\nDiabetes has symptom Fatigue\n{RESULT_END}"
    )


def test_result_block_empty_list():
    assert render_result_block([]) == f"{RESULT_BEGIN}\nno path found\n{RESULT_END}"


@pytest.mark.parametrize("kind", ["no_entity_match", "max_limit_reached", "malformed_query"])
def test_result_block_control_signals(kind):
    assert render_result_block(ControlSignal(kind=kind)) == f"{RESULT_BEGIN}\n{kind}\n{RESULT_END}"


def test_result_block_strips_delimiters_from_facts():
    block = render_result_block([f"A {QUERY_BEGIN}r B"])
    assert QUERY_BEGIN not in block
    assert block == f"{RESULT_BEGIN}\nA r B\n{RESULT_END}"
