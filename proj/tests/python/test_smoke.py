import json
import math
import os
import random

import pytest

import capval

FIXTURES = os.environ.get("CAPVAL_FIXTURE_DIR", os.path.join(os.path.dirname(__file__), "..", "fixtures"))


def fixture(name):
    with open(os.path.join(FIXTURES, name), encoding="utf-8") as f:
        return f.read()


def test_sigmoid_bounds_and_midpoint():
    assert capval.sigmoid_capability(2.0, 5.0, 2.0, 0.25) == pytest.approx(0.625)
    assert capval.sigmoid_capability(1e6, 5.0, 2.0, 0.25) == pytest.approx(0.25)
    assert capval.sigmoid_capability(-1e6, 5.0, 2.0, 0.25) == pytest.approx(1.0)
    assert capval.sigmoid_slope(2.0, 5.0, 2.0, 0.25) < 0


def test_fit_recovers_noiseless_curve():
    losses = [1.2 + 0.15 * i for i in range(12)]
    caps = [capval.sigmoid_capability(x, 6.0, 2.0, 0.25) for x in losses]
    fit = capval.fit_sigmoid(losses, caps, 0.25, domain_id="toy")
    assert fit.alpha == pytest.approx(6.0, rel=1e-4)
    assert fit.beta == pytest.approx(2.0, rel=1e-4)
    assert fit.mse < 1e-12
    assert fit.predict(2.0) == pytest.approx(0.625, abs=1e-6)
    assert fit.n_points == 12
    assert len(fit.residuals) == 12


def test_fit_with_noise_reports_metrics():
    rng = random.Random(7)
    losses = [1.0 + 0.1 * i for i in range(25)]
    caps = [min(1.0, max(0.25, capval.sigmoid_capability(x, 4.0, 2.2, 0.25) + rng.gauss(0, 0.01))) for x in losses]
    fit = capval.fit_sigmoid(losses, caps, 0.25, p95_mode="mean_abs")
    assert fit.p95_mode == "mean_abs"
    assert 3.0 < fit.alpha < 5.5
    assert fit.p95 > 0
    m = capval.fit_metrics([0.1, -0.1, 0.1, -0.1])
    assert m["p95"] == pytest.approx(1.96 * 0.1)
    assert m["mse"] == pytest.approx(0.01)


def test_fit_errors():
    with pytest.raises(capval.InsufficientDataError):
        capval.fit_sigmoid([1.0, 2.0], [0.9, 0.3], 0.25)
    with pytest.raises(capval.FitError):
        capval.fit_sigmoid([1.0, 2.0], [0.9, 0.3], 0.25)
    with pytest.raises(capval.ConfigError):
        capval.fit_sigmoid([1.0, 2.0, 3.0], [0.9, 0.5, 0.3], 0.25, p95_mode="median")


def test_loglinear_exact():
    compute = [1e18, 1e19, 1e20, 1e21]
    loss = [5.0 - 0.1 * math.log(c) for c in compute]
    fit = capval.fit_loglinear(compute, loss)
    assert fit.slope == pytest.approx(-0.1)
    assert fit.intercept == pytest.approx(5.0)
    assert fit.r_squared == pytest.approx(1.0)
    assert fit.evaluate(1e22) == pytest.approx(5.0 - 0.1 * math.log(1e22))
    assert capval.training_compute(1e9, 2e10) == pytest.approx(1.2e20)


def test_stage_gap_of_shifted_trend():
    rows = []
    for t in [1e9, 2e9, 4e9, 8e9]:
        rows.append({"stage": "pretrain", "tokens_seen": t, "loss": 4.0 - 0.05 * math.log(t)})
    for t in [16e9, 32e9, 64e9]:
        rows.append({"stage": "annealing", "tokens_seen": t, "loss": 3.7 - 0.05 * math.log(t)})
    g = capval.stage_gap(rows)
    assert g["gap"] == pytest.approx(0.3, abs=1e-9)
    assert g["before_stage"] == "pretrain"


def test_losses_and_aggregation():
    a = capval.sample_loss_from_logprobs("s1", "m", "d", [-1.0, -3.0])
    b = capval.sample_loss_from_logprobs("s2", "m", "d", [-4.0])
    assert a.mean_ce == pytest.approx(2.0)
    assert a.token_count == 2
    assert capval.domain_loss([a, b]) == pytest.approx(3.0)
    assert capval.domain_loss([a, b], "micro") == pytest.approx(8.0 / 3.0)


def test_parsers_on_fixtures():
    keywords = capval.parse_extraction_output(fixture("extraction_chemistry.txt"))
    assert 0 < len(keywords) <= 6
    exp = capval.parse_expansion_output(fixture("expansion_sleep.txt"))
    assert [q["answer"] for q in exp["questions"]] == ["B", "C"]
    assert capval.parse_filter_verdict("Judgment Result: [yes]") is True
    assert capval.parse_filter_verdict("Judgment Result: [No]") is False
    with pytest.raises(capval.ParseError):
        capval.parse_filter_verdict("Judgment Result: [Maybe]")
    with pytest.raises(capval.ParseError):
        capval.parse_extraction_output("nothing here")


def test_blank_fill():
    question = fixture("sleep_question.txt")
    filled = capval.blank_fill(question, "D")
    assert "Answer: Sleep apnea" in filled


def test_tokenize():
    assert capval.tokenize("Don't stop, 3.14 RAM!") == ["don't", "stop", "3.14", "ram"]


CORPUS = [
    "Photosynthesis converts light energy into chemical energy inside the chloroplasts of plant cells. "
    "The light reactions split water and release oxygen while producing ATP and NADPH for the Calvin cycle.",
    "Mitochondria are the site of cellular respiration, where glucose is oxidized and the energy is stored "
    "as ATP through oxidative phosphorylation along the inner membrane electron transport chain.",
    "Plate tectonics describes the motion of lithospheric plates over the asthenosphere. Earthquakes and "
    "volcanoes cluster along plate boundaries where plates collide, separate or slide past each other.",
]


def write_corpus(tmp_path):
    shard = tmp_path / "corpus.jsonl"
    shard.write_text("".join(json.dumps({"text": t}) + "\n" for t in CORPUS), encoding="utf-8")
    return str(shard)


def test_index_roundtrip(tmp_path):
    index = capval.Index.build([write_corpus(tmp_path)], target_chars=120, min_chars=40, max_chars=400)
    assert index.passage_count >= 3
    hits = index.retrieve("chloroplasts light reactions", 2)
    assert hits and "chloroplasts" in hits[0]["text"].lower()
    index.save(str(tmp_path / "idx"))
    again = capval.Index.load(str(tmp_path / "idx"))
    assert again.retrieve("chloroplasts light reactions", 2) == hits


def fake_llm(prompt):
    if "<Knowledge_Material_Start>" in prompt:
        return (
            "Key Knowledge Concepts\n\n1. chloroplasts\n\nRelated Knowledge Expansion\n\n1. light reactions\n\n"
            "Questions\n\n<Question_1_Start>\n1. Where do the light reactions run?\n\nA. Nucleus\nB. Chloroplast\n"
            "Answer: B\n<Question_1_End>\n"
        )
    if "<Knowledge_Concept_Start>" in prompt:
        concept = prompt.rsplit("<Knowledge_Concept_Start>", 1)[1].split("<Knowledge_Concept_End>")[0].strip()
        passage = prompt.rsplit("<Candidate_Relevant_Text_Start>", 1)[1].split("<Candidate_Relevant_Text_End>")[0]
        return "Judgment Result: [Yes]" if concept.lower() in passage.lower() else "Judgment Result: [No]"
    return "Extraction of key knowledge words:\n1. chloroplasts\n2. mitochondria\n"


def test_synthesize_with_python_backend(tmp_path):
    index = capval.Index.build([write_corpus(tmp_path)], target_chars=120, min_chars=40, max_chars=400)
    bench = tmp_path / "bench.jsonl"
    bench.write_text(
        json.dumps({"id": "q1", "benchmark_id": "bio", "text": "Which organelle hosts photosynthesis?", "answer": "chloroplast"})
        + "\n",
        encoding="utf-8",
    )
    domains = [{"id": "science", "gamma": 0.25, "benchmarks": [{"id": "bio", "sample_path": str(bench)}]}]
    out = capval.synthesize(domains, "science", fake_llm, index=index)
    assert out["report"]["failures"] == 0
    assert len(out["factors"]) == 2
    assert out["samples"], "expected at least one synthesized sample"
    for s in out["samples"]:
        assert s["domain_id"] == "science"
        assert "Answer: B" in s["text"]


def test_backend_exceptions_become_failures(tmp_path):
    bench = tmp_path / "bench.jsonl"
    bench.write_text(json.dumps({"id": "q1", "benchmark_id": "b", "text": "Some question?", "answer": "x"}) + "\n")
    domains = {"domains": [{"id": "d", "benchmarks": [{"id": "b", "sample_path": str(bench)}]}]}

    def broken(prompt):
        raise RuntimeError("offline")

    index = capval.Index.build([write_corpus(tmp_path)], target_chars=120, min_chars=40, max_chars=400)
    out = capval.synthesize(domains, "d", broken, index=index)
    assert out["samples"] == []
    assert out["report"]["failures"] >= 1


def test_prompt_dir_exists():
    for name in ("extraction.txt", "filtering.txt", "expansion.txt"):
        assert os.path.isfile(os.path.join(capval.PROMPT_DIR, name))
