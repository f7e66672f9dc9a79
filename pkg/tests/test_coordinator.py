import threading

import pytest

from graphmind import load_script
from graphmind.backends import ScriptedBackend
from graphmind.coordinator import Workspace, prepare_graph, run_pipeline
from graphmind.exceptions import PipelineError, WorkspaceError
from graphmind.protocol import FINAL_ANSWER
from graphmind.settings import ChainConfig, PipelineConfig

FATIGUE_QUERY = "Why do I keep feeling fatigued even after sleeping well?"


def test_fatigue_query(medical_graph, fatigue_backend):
    answer, record = run_pipeline(FATIGUE_QUERY, medical_graph, ChainConfig(), fatigue_backend)
    assert answer.startswith("Based on your symptoms")
    assert record.final_answer == answer
    assert record.decomposition.decomposed
    assert [c.sub_question.index for c in record.chains] == [0, 1]
    assert all(c.status == "completed" for c in record.chains)
    assert record.conflicts == []
    assert record.config.graph.path.name == "medical.tsv"
    assert {"decompose", "chains", "synthesize", "total"} <= record.timings.keys()


def test_failed_chain_is_left_out(medical_graph, fatigue_backend, failing_backend):
    backend = failing_backend(fatigue_backend, chains=["q1"])
    answer, record = run_pipeline(FATIGUE_QUERY, medical_graph, ChainConfig(), backend)
    assert answer.startswith("Based on your symptoms")
    assert [c.status for c in record.chains] == ["completed", "failed"]
    assert "backend down for q1" in record.chains[1].error
    synthesis = [r for r in fatigue_backend.requests if r.stage == "synthesize"]
    assert "Chronic Fatigue Syndrome impairs Sleep Recovery, so" not in synthesis[0].messages[0].content


def test_all_chains_failed(medical_graph, fatigue_backend, failing_backend):
    backend = failing_backend(fatigue_backend, chains=["q0", "q1"])
    with pytest.raises(PipelineError) as exc:
        run_pipeline(FATIGUE_QUERY, medical_graph, ChainConfig(), backend)
    record = exc.value.audit
    assert record is not None
    assert record.final_answer is None
    assert record.decomposition is not None
    assert [c.status for c in record.chains] == ["failed", "failed"]


def test_decomposition_failure(medical_graph, failing_backend):
    with pytest.raises(PipelineError) as exc:
        run_pipeline(FATIGUE_QUERY, medical_graph, ChainConfig(), failing_backend())
    assert "[decompose]" in str(exc.value)
    assert exc.value.audit.decomposition is None
    assert exc.value.audit.chains == []


def test_synthesis_failure_keeps_chains(medical_graph, fixtures_dir):
    backend = load_script(fixtures_dir / "fatigue_script.jsonl")
    entries = backend.entries
    del entries[("root", 1)]
    with pytest.raises(PipelineError) as exc:
        run_pipeline(FATIGUE_QUERY, medical_graph, ChainConfig(), ScriptedBackend(entries))
    record = exc.value.audit
    assert len(record.chains) == 2
    assert "[synthesize]" in str(exc.value)


def test_runs_are_deterministic(medical_graph, fixtures_dir):
    records = [
        run_pipeline(
            FATIGUE_QUERY,
            medical_graph,
            ChainConfig(),
            load_script(fixtures_dir / "fatigue_script.jsonl"),
        )[1]
        for _ in range(5)
    ]
    first = records[0].comparable()
    assert all(r.comparable() == first for r in records[1:])


def test_sequential_chains_match_parallel(medical_graph, fixtures_dir):
    def run(parallelism):
        config = PipelineConfig(parallelism=parallelism)
        backend = load_script(fixtures_dir / "fatigue_script.jsonl")
        return run_pipeline(FATIGUE_QUERY, medical_graph, config, backend)[1].comparable()

    sequential, parallel = run(1), run(None)
    sequential["config"]["pipeline"]["parallelism"] = None
    assert sequential == parallel


def test_without_decomposer(medical_graph):
    backend = ScriptedBackend.from_chains(
        {"q0": [f"{FINAL_ANSWER} tired", "Several conditions cause fatigue."], "root": ["Final."]}
    )
    config = PipelineConfig(use_decomposer=False)
    answer, record = run_pipeline(FATIGUE_QUERY, medical_graph, config, backend)
    assert answer == "Final."
    assert not record.decomposition.decomposed
    assert record.decomposition.sub_questions[0].text == FATIGUE_QUERY
    assert [r.stage for r in backend.requests if r.chain_id == "root"] == ["synthesize"]


def test_without_synthesizer(medical_graph, fatigue_backend):
    config = PipelineConfig(use_synthesizer=False)
    answer, record = run_pipeline(FATIGUE_QUERY, medical_graph, config, fatigue_backend)
    assert answer == (
        "Fatigue is a symptom of Anemia, Chronic Fatigue Syndrome and Hypothyroidism.\n\n"
        "Chronic Fatigue Syndrome impairs Sleep Recovery, so sleep does not feel restorative."
    )
    assert fatigue_backend.steps_used("root") == 1


def test_allow_list_hides_conflicting_relation(medical_graph):
    backend = ScriptedBackend.from_chains(
        {
            "root": ["1. Does DrugX treat headaches?\n2. Does DrugX cause headaches?", "Final."],
            "q0": ["<|KG_QUERY_BEGIN|>DrugX<|KG_QUERY_END|>", f"{FINAL_ANSWER} yes", "It treats them."],
            "q1": [f"{FINAL_ANSWER} no evidence", "Unclear."],
        }
    )
    config = PipelineConfig(relations=["treats", "has_symptom"])
    _, record = run_pipeline("Is DrugX safe for headaches?", medical_graph, config, backend)
    assert record.conflicts == []
    assert record.chains[0].evidence.facts == ["DrugX treats Headache"]


def test_conflicting_chains_are_suppressed(medical_graph):
    backend = ScriptedBackend.from_chains(
        {
            "root": ["1. Does DrugX treat headaches?\n2. Does DrugX cause headaches?", "Final."],
            "q0": ["<|KG_QUERY_BEGIN|>DrugX<|KG_QUERY_END|>", f"{FINAL_ANSWER} both", "It treats and causes them."],
            "q1": ["<|KG_QUERY_BEGIN|>DrugX|Headache<|KG_QUERY_END|>", f"{FINAL_ANSWER} causes", "It causes them."],
        }
    )
    _, record = run_pipeline("Is DrugX safe for headaches?", medical_graph, PipelineConfig(), backend)
    pairs = [c.pair for c in record.conflicts]
    assert (0, 0) in pairs
    assert (0, 1) in pairs
    statuses = {c.sub_question.index: c.status for c in record.chains}
    assert statuses[0] == "completed"
    assert statuses[1] == "suppressed"


def test_prepare_graph_applies_allow_list(medical_graph):
    assert prepare_graph(medical_graph, PipelineConfig()) is medical_graph
    restricted = prepare_graph(medical_graph, PipelineConfig(relations=["impairs"]))
    assert restricted.relations == {"impairs"}


def test_synonyms_normalize_answers(medical_graph, fatigue_backend):
    config = PipelineConfig(synonyms={"Chronic Fatigue Syndrome": "ME/CFS"}, use_synthesizer=False)
    answer, _ = run_pipeline(FATIGUE_QUERY, medical_graph, config, fatigue_backend)
    assert "ME/CFS impairs Sleep Recovery" in answer
    assert "Chronic Fatigue Syndrome" not in answer


# Workspace


def test_workspace_single_assignment():
    ws = Workspace()
    assert ws.get("a") == ("pending", None)
    assert ws.put("a", 1) == "ready"
    assert ws.get("a") == ("ready", 1)
    with pytest.raises(WorkspaceError):
        ws.put("a", 2)
    with pytest.raises(WorkspaceError):
        ws.fail("a")
    assert ws.get("a") == ("ready", 1)


def test_workspace_failure_payload():
    ws = Workspace()
    ws.fail("b", "boom")
    assert ws.status("b") == "failed"
    assert ws.get("b") == ("failed", "boom")


def test_workspace_subscription_fires_once_all_keys_settle():
    ws = Workspace()
    fired = []
    ws.subscribe(["a", "b"], lambda w: fired.append(w.keys()))
    ws.put("a", 1)
    assert fired == []
    ws.fail("b")
    assert fired == [["a", "b"]]
    ws.put("c", 3)
    assert len(fired) == 1


def test_workspace_subscription_on_settled_keys():
    ws = Workspace()
    ws.put("a", 1)
    fired = []
    ws.subscribe(["a"], lambda w: fired.append(True))
    assert fired == [True]


def test_workspace_wait():
    ws = Workspace()
    assert ws.get("late", wait=True, timeout=0.01) == ("pending", None)
    timer = threading.Timer(0.05, ws.put, args=("late", "here"))
    timer.start()
    assert ws.get("late", wait=True, timeout=5) == ("ready", "here")
    timer.join()


def test_workspace_concurrent_writers():
    ws = Workspace()
    threads = [threading.Thread(target=ws.put, args=(f"k{i}", i)) for i in range(50)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(ws.keys()) == 50
    assert all(ws.get(f"k{i}") == ("ready", i) for i in range(50))
