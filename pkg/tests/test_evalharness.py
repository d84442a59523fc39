"""Eval harness oracle tests: prompt bytes, shuffle statistics, letter
matching, greedy/loglik scoring against cooperating stub models, and
report determinism."""

import json

import numpy as np
import pytest

from desklm.evalharness import (DEFAULT_CHAT_TEMPLATE, DEFAULT_HEADER,
                                EvalError, EvalItem, EvalReport, LETTERS,
                                UNPARSED, build_prompt, generate_greedy,
                                load_taskfile, match_choice,
                                option_permutation, run_eval,
                                score_loglikelihood)
from desklm.rng import fnv1a64
from desklm.tokenizer.vocab import EOS_ID

VOCAB = 256  # model-driven tests use ASCII-only prompts


class CharTok:
    """One token per character; ids are code points shifted past specials."""

    def encode(self, text):
        return [ord(c) + 4 for c in text]

    def decode(self, ids):
        return "".join(chr(i - 4) for i in ids)


def _decode_prompt(ids):
    # ids[0] is BOS; the rest are shifted code points.
    return "".join(chr(i - 4) for i in ids[1:])


class ContinuationModel:
    """Stub that walks a per-prompt target continuation, then emits EOS.

    Subclasses decide the continuation from the decoded prompt (the text
    up to and including the final "Answer:").
    """

    def continuation_for(self, prompt_text):
        raise NotImplementedError

    def logits(self, ids):
        text = _decode_prompt(ids)
        marker = text.rfind("Answer:") + len("Answer:")
        prompt, emitted = text[:marker], text[marker:]
        target = self.continuation_for(prompt)
        if target.startswith(emitted) and len(emitted) < len(target):
            want = ord(target[len(emitted)]) + 4
        else:
            want = EOS_ID
        out = np.zeros((len(ids), VOCAB))
        out[-1, want] = 10.0
        return out


def _parse_displayed(prompt_text):
    """Question and letter->option mapping of the final block."""
    block = prompt_text[prompt_text.rfind("Question: "):]
    lines = block.split("\n")
    question = lines[0][len("Question: "):]
    displayed = {ln[0]: ln[3:] for ln in lines[1:5]}
    return question, displayed


class OracleModel(ContinuationModel):
    """Always answers with the gold letter of the final block."""

    def __init__(self, answers):
        self.answers = answers  # question -> correct option text

    def continuation_for(self, prompt_text):
        question, displayed = _parse_displayed(prompt_text)
        gold_text = self.answers[question]
        letter = next(L for L, opt in displayed.items() if opt == gold_text)
        return f" {letter}"


class RandomLetterModel(ContinuationModel):
    """Deterministic pseudo-random letter per prompt."""

    def __init__(self, salt):
        self.salt = salt

    def continuation_for(self, prompt_text):
        h = fnv1a64(f"{self.salt}|{prompt_text}".encode("utf-8"))
        return f" {LETTERS[h % 4]}"


class FixedTextModel(ContinuationModel):
    def __init__(self, text):
        self.text = text

    def continuation_for(self, prompt_text):
        return self.text


class EosFirstModel:
    def logits(self, ids):
        out = np.zeros((len(ids), VOCAB))
        out[-1, EOS_ID] = 10.0
        return out


class UniformModel:
    def logits(self, ids):
        return np.zeros((len(ids), VOCAB))


class NextTokenModel:
    """Assigns all mass to the token stream of one ideal continuation."""

    def __init__(self, tokenizer, prompt_text, ideal_continuation):
        self.ideal = ([1] + tokenizer.encode(prompt_text)
                      + tokenizer.encode(ideal_continuation))

    def logits(self, ids):
        out = np.zeros((len(ids), VOCAB))
        for row in range(len(ids)):
            if row + 1 < len(self.ideal):
                out[row, self.ideal[row + 1]] = 25.0
        return out


def _item(i, question, options, answer, category="t"):
    return EvalItem(question=question, options=tuple(options),
                    correct_index=answer, category=category, item_id=i)


def _synthetic_items(n, seed=0):
    items = []
    for i in range(n):
        options = [f"opt{i}{L}" for L in "wxyz"]
        items.append(_item(i, f"synth question {i}", options,
                           answer=(i * 7 + seed) % 4))
    return items


def _answers(items):
    return {it.question: it.options[it.correct_index] for it in items}


# ------------------------------------------------------------ item/type ----

def test_eval_item_validation():
    with pytest.raises(EvalError):
        _item(0, "q", ["a", "b", "c"], 0)  # 3 options
    with pytest.raises(EvalError):
        _item(0, "q", ["a", "b", "c", "a"], 0)  # duplicate
    with pytest.raises(EvalError):
        _item(0, "q", ["a", "b", "c", "d"], 4)  # index out of range
    with pytest.raises(EvalError):
        _item(0, "", ["a", "b", "c", "d"], 0)  # empty question


def test_report_accuracy_must_match_records():
    rec = ({"item": 0, "category": "", "predicted": "A", "gold": "A",
            "correct": True},)
    with pytest.raises(EvalError):
        EvalReport(records=rec, accuracy=0.0, n_shots=0, seed=0,
                   mode="generate", unparsed=0)


# -------------------------------------------------------------- prompts ----

def _identity_seed(item_id):
    for seed in range(2000):
        if option_permutation(seed, item_id) == [0, 1, 2, 3]:
            return seed
    raise AssertionError("no identity permutation found")


def test_zero_shot_prompt_bytes_with_identity_shuffle():
    item = _item(0, "What is the capital of Thailand?",
                 ["Bangkok", "Chiang Mai", "Phuket", "Khon Kaen"], 0)
    seed = _identity_seed(0)
    prompt = build_prompt(item, [], seed)
    assert prompt.text == (
        DEFAULT_HEADER
        + "\n\nQuestion: What is the capital of Thailand?"
        + "\nA. Bangkok\nB. Chiang Mai\nC. Phuket\nD. Khon Kaen"
        + "\nAnswer:")
    assert prompt.gold_letter == "A"
    assert prompt.mapping == {"A": "Bangkok", "B": "Chiang Mai",
                              "C": "Phuket", "D": "Khon Kaen"}


def test_gold_letter_tracks_the_permutation():
    item = _item(5, "q5", ["r", "s", "t", "u"], 1)
    for seed in range(40):
        perm = option_permutation(seed, 5)
        prompt = build_prompt(item, [], seed)
        assert prompt.gold_letter == LETTERS[perm.index(1)]
        assert prompt.mapping[prompt.gold_letter] == "s"
        # De-shuffling recovers the original option order exactly.
        assert [prompt.mapping[LETTERS[perm.index(k)]]
                for k in range(4)] == list(item.options)


def test_three_shot_prompt_is_deterministic_and_well_formed():
    items = _synthetic_items(6)
    fewshot = items[1:4]
    a = build_prompt(items[0], fewshot, seed=11)
    b = build_prompt(items[0], fewshot, seed=11)
    assert a.text == b.text
    blocks = a.text.split("\n\n")
    assert blocks[0] == DEFAULT_HEADER
    assert len(blocks) == 5
    for block, exemplar in zip(blocks[1:4], fewshot):
        perm = option_permutation(11, exemplar.item_id)
        gold = LETTERS[perm.index(exemplar.correct_index)]
        assert block.endswith(f"Answer: {gold}")
        assert block.startswith(f"Question: {exemplar.question}\n")
    assert blocks[4].endswith("Answer:")


def test_exemplar_shuffle_is_stable_across_targets():
    items = _synthetic_items(5)
    as_exemplar_for_0 = build_prompt(items[0], [items[2]], seed=3)
    as_exemplar_for_1 = build_prompt(items[1], [items[2]], seed=3)
    block0 = as_exemplar_for_0.text.split("\n\n")[1]
    block1 = as_exemplar_for_1.text.split("\n\n")[1]
    assert block0 == block1


def test_chat_template_wraps_the_whole_prompt():
    item = _item(0, "q0", ["a", "b", "c", "d"], 2)
    inner = build_prompt(item, [], seed=7).text
    wrapped = build_prompt(item, [], seed=7,
                           chat_template=DEFAULT_CHAT_TEMPLATE).text
    assert wrapped == f"<|user|>\n{inner}\n<|assistant|>\n"
    with pytest.raises(EvalError):
        build_prompt(item, [], seed=7, chat_template="no placeholder")


def test_fewshot_must_exclude_the_target():
    items = _synthetic_items(3)
    with pytest.raises(EvalError):
        build_prompt(items[0], [items[0]], seed=0)


def test_gold_position_frequencies_are_near_uniform():
    counts = {L: 0 for L in LETTERS}
    items = _synthetic_items(1000)
    for item in items:
        perm = option_permutation(123, item.item_id)
        counts[LETTERS[perm.index(item.correct_index)]] += 1
    for letter, count in counts.items():
        assert 0.21 <= count / 1000 <= 0.29, (letter, count)


# ------------------------------------------------------- letter matching ----

@pytest.mark.parametrize("text,expected", [
    (" B. เพราะอากาศร้อน", "B"),
    ("Answer: C", "C"),
    ("BECAUSE", UNPARSED),
    ("(D)", "D"),
    ("A", "A"),
    (" b.", UNPARSED),
    ("so the answer is B.", "B"),
    ("ABCD", UNPARSED),
    ("Answer:B", "B"),
    ("1. A", "A"),
    ("D:", "D"),
    ("", UNPARSED),
    ("the C4 dataset", UNPARSED),
    ("C)", "C"),
])
def test_match_choice_rule(text, expected):
    assert match_choice(text) == expected


# ---------------------------------------------------------------- greedy ----

def test_greedy_follows_stub_and_strips_eos():
    tok = CharTok()
    item = _item(0, "q0", ["a", "b", "c", "d"], 0)
    prompt = build_prompt(item, [], seed=1)
    model = FixedTextModel(" B. more")
    out = generate_greedy(model, tok, prompt.text)
    assert tok.decode(out) == " B. more"  # 8 chars < 10-token budget
    assert generate_greedy(model, tok, prompt.text) == out  # deterministic


def test_greedy_respects_the_ten_token_budget():
    tok = CharTok()
    item = _item(0, "q0", ["a", "b", "c", "d"], 0)
    prompt = build_prompt(item, [], seed=1)
    out = generate_greedy(FixedTextModel(" A" + "x" * 30), tok, prompt.text)
    assert len(out) == 10
    assert tok.decode(out) == " Axxxxxxxx"


def test_greedy_eos_first_gives_empty_continuation():
    tok = CharTok()
    item = _item(0, "q0", ["a", "b", "c", "d"], 0)
    prompt = build_prompt(item, [], seed=1)
    out = generate_greedy(EosFirstModel(), tok, prompt.text)
    assert out == []
    assert match_choice(tok.decode(out)) == UNPARSED


def test_greedy_rejects_prompts_that_overflow_context():
    class TinyContextModel(EosFirstModel):
        context_len = 16

    item = _item(0, "q0", ["a", "b", "c", "d"], 0)
    prompt = build_prompt(item, [], seed=1)
    with pytest.raises(EvalError):
        generate_greedy(TinyContextModel(), CharTok(), prompt.text)


# ---------------------------------------------------------------- loglik ----

def test_loglik_all_mass_on_one_option_selects_it():
    tok = CharTok()
    prompt = "Question: pick\nA. aa\nB. bb\nC. cc\nD. dd\nAnswer:"
    model = NextTokenModel(tok, prompt, " cc")
    assert score_loglikelihood(model, tok, prompt, ["aa", "bb", "cc", "dd"]) == 2


def test_loglik_identical_options_tie_to_lowest_index():
    tok = CharTok()
    assert score_loglikelihood(UniformModel(), tok, "p", ["xx", "xx"]) == 0


def test_loglik_uniform_model_prefers_fewest_tokens():
    tok = CharTok()
    options = ["a much longer option", "tiny", "medium one"]
    assert score_loglikelihood(UniformModel(), tok, "p", options) == 1


def test_loglik_context_overflow_errors():
    class Tiny(UniformModel):
        context_len = 8

    with pytest.raises(EvalError):
        score_loglikelihood(Tiny(), CharTok(), "long prompt", ["option"])


def test_loglik_matches_hand_computed_sum():
    tok = CharTok()
    rng = np.random.default_rng(3)

    class RandomRows:
        def __init__(self):
            self.cache = {}

        def logits(self, ids):
            key = tuple(ids)
            if key not in self.cache:
                self.cache[key] = rng.standard_normal((len(ids), VOCAB))
            return self.cache[key]

    model = RandomRows()
    prompt, options = "pq", ["ab", "c"]
    got = score_loglikelihood(model, tok, prompt, options)
    scores = []
    for opt in options:
        full = [1] + tok.encode(prompt) + tok.encode(" " + opt)
        rows = np.asarray(model.logits(full[:-1]), dtype=np.float64)
        total = 0.0
        for pos in range(3, len(full)):
            row = rows[pos - 1]
            total += row[full[pos]] - (
                np.log(np.sum(np.exp(row - row.max()))) + row.max())
        scores.append(total)
    assert got == int(np.argmax(scores))
    assert scores[got] == max(scores)


# ------------------------------------------------------------- run_eval ----

def test_oracle_model_scores_perfect_accuracy():
    items = _synthetic_items(12)
    report = run_eval(OracleModel(_answers(items)), CharTok(), items,
                      n_shots=3, seed=5)
    assert report.accuracy == 1.0
    assert report.unparsed == 0
    assert len(report.records) == 12
    assert [r["item"] for r in report.records] == list(range(12))


def test_random_model_lands_in_the_binomial_band():
    items = _synthetic_items(2000)
    report = run_eval(RandomLetterModel(7), CharTok(), items,
                      n_shots=0, seed=17)
    assert 0.22 <= report.accuracy <= 0.28, report.accuracy


def test_same_seed_gives_byte_identical_reports():
    items = _synthetic_items(25)
    kwargs = dict(n_shots=2, seed=9)
    a = run_eval(OracleModel(_answers(items)), CharTok(), items, **kwargs)
    b = run_eval(OracleModel(_answers(items)), CharTok(), items, **kwargs)
    assert a.to_json().encode() == b.to_json().encode()


def test_always_unparsed_model_scores_zero_with_full_unparsed_count():
    items = _synthetic_items(10)
    report = run_eval(FixedTextModel(" nope"), CharTok(), items,
                      n_shots=1, seed=3)
    assert report.accuracy == 0.0
    assert report.unparsed == 10
    assert all(r["predicted"] == UNPARSED for r in report.records)


def test_loglik_mode_with_gold_loving_model():
    items = _synthetic_items(8)
    answers = _answers(items)

    class GoldLoglik:
        def __init__(self, tok):
            self.tok = tok

        def logits(self, ids):
            text = _decode_prompt(ids)
            # The candidate continuation begins after the last "Answer:".
            marker = text.rfind("Answer:") + len("Answer:")
            question, _ = _parse_displayed(text[:marker])
            ideal = ([1] + self.tok.encode(text[:marker])
                     + self.tok.encode(" " + answers[question]))
            out = np.zeros((len(ids), VOCAB))
            for row in range(len(ids)):
                if row + 1 < len(ideal):
                    out[row, ideal[row + 1]] = 25.0
            return out

    tok = CharTok()
    report = run_eval(GoldLoglik(tok), tok, items, n_shots=1, seed=4,
                      mode="loglik")
    assert report.accuracy == 1.0
    assert report.unparsed == 0


def test_run_eval_validates_inputs():
    items = _synthetic_items(3)
    model = OracleModel(_answers(items))
    with pytest.raises(EvalError):
        run_eval(model, CharTok(), items, n_shots=3, seed=0)  # needs 4 items
    with pytest.raises(EvalError):
        run_eval(model, CharTok(), items, n_shots=-1, seed=0)
    with pytest.raises(EvalError):
        run_eval(model, CharTok(), items, n_shots=0, seed=0, mode="beam")


def test_report_json_round_trip_and_schema():
    items = _synthetic_items(6)
    report = run_eval(OracleModel(_answers(items)), CharTok(), items,
                      n_shots=2, seed=1)
    payload = json.loads(report.to_json())
    assert payload["accuracy"] == 1.0
    assert payload["n_items"] == 6
    assert payload["n_shots"] == 2
    assert payload["seed"] == 1
    assert payload["mode"] == "generate"
    assert payload["unparsed"] == 0
    recomputed = sum(r["correct"] for r in payload["records"]) / 6
    assert recomputed == payload["accuracy"]


# -------------------------------------------------------------- taskfile ----

def test_load_taskfile_reads_order_ids_and_categories(tmp_path):
    path = tmp_path / "tasks.jsonl"
    rows = [
        {"question": "q one", "options": ["a", "b", "c", "d"], "answer": 0,
         "category": "grammar"},
        {"question": "q two", "options": ["w", "x", "y", "z"], "answer": 3},
    ]
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n",
                    encoding="utf-8")
    items = load_taskfile(path)
    assert [it.item_id for it in items] == [0, 1]
    assert items[0].category == "grammar"
    assert items[1].category == ""
    assert items[1].correct_index == 3


def test_load_taskfile_lists_every_malformed_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    lines = [
        json.dumps({"question": "ok", "options": ["a", "b", "c", "d"],
                    "answer": 1}),
        "{not json",
        json.dumps({"question": "missing", "options": ["a", "b"],
                    "answer": 0}),
        json.dumps({"question": "bad index", "options": ["a", "b", "c", "d"],
                    "answer": 9}),
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(EvalError) as err:
        load_taskfile(path)
    message = str(err.value)
    assert "line 2" in message
    assert "line 3" in message
    assert "line 4" in message
    assert "line 1" not in message
