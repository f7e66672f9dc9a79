import pytest

from graphmind.backends import ScriptedBackend
from graphmind.decomposer import NO_DECOMPOSITION, decompose, parse_decomposition
from graphmind.exceptions import DecompositionParseError, InvalidInputError, StageError

QUERY = "Why do I keep feeling fatigued even after sleeping well?"


def _backend(reply):
    return ScriptedBackend.from_chains({"root": [reply]})


def test_fatigue_query_decomposes(fatigue_backend):
    result = decompose(QUERY, 4, fatigue_backend)
    assert result.decomposed
    assert [q.index for q in result.sub_questions] == [0, 1]
    assert result.sub_questions[1].seed_entities == ["chronic fatigue syndrome", "sleep recovery"]
    assert result.raw.startswith("1. What conditions")


def test_truncates_to_n_q():
    reply = "\n".join(f"{i}. Question number {i}?" for i in range(1, 7))
    result = decompose(QUERY, 4, _backend(reply))
    assert len(result.sub_questions) == 4
    assert result.sub_questions[-1].text == "Question number 4?"


def test_no_decomposition_falls_back():
    result = decompose(QUERY, 4, _backend(NO_DECOMPOSITION))
    assert not result.decomposed
    assert [q.text for q in result.sub_questions] == [QUERY]
    assert result.raw == NO_DECOMPOSITION


def test_unparseable_output_falls_back():
    result = decompose(QUERY, 4, _backend("I think this is about sleep."))
    assert not result.decomposed
    assert len(result.sub_questions) == 1


def test_decompose_uses_root_chain_and_cooler_sampling():
    backend = _backend("1. What causes fatigue?")
    decompose(QUERY, 4, backend)
    (request,) = backend.requests
    assert request.chain_id == "root"
    assert request.stage == "decompose"
    assert request.sampling.temperature == 0.6
    assert QUERY in request.messages[0].content


def test_backend_failure_names_the_stage(failing_backend):
    with pytest.raises(StageError) as exc:
        decompose(QUERY, 4, failing_backend())
    assert exc.value.stage == "decompose"
    assert str(exc.value).startswith("[decompose]")


def test_invalid_inputs():
    with pytest.raises(InvalidInputError):
        decompose("  ", 4, _backend("1. q"))
    with pytest.raises(InvalidInputError):
        decompose(QUERY, 0, _backend("1. q"))


@pytest.mark.parametrize(
    "text, expected",
    [
        ("1. What is anemia?", [("What is anemia?", [])]),
        ("2) Does iron help? [entities: iron supplement]", [("Does iron help?", ["iron supplement"])]),
        (
            "Sure:\n1. A? [Entities: a; b ;]\n\n2. B?",
            [("A?", ["a", "b"]), ("B?", [])],
        ),
    ],
)
def test_parse_decomposition(text, expected):
    assert parse_decomposition(text) == expected


def test_parse_decomposition_without_numbers():
    with pytest.raises(DecompositionParseError):
        parse_decomposition("- a bullet\n- another")
