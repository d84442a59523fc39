"""Few-shot multiple-choice evaluation: seeded option shuffling, greedy
continuation with standalone-letter matching in the first 10 tokens, raw
(unnormalized) log-likelihood scoring, and JSON accuracy reports.

Model protocol: the harness drives any object with `logits(ids) ->
ndarray [len(ids), vocab]`; a `config.context_len` or `context_len`
attribute, when present, bounds prompt length.  Prompts are framed with a
leading BOS token, matching how training sequences are packed.

Option order is shuffled once per item by a stream derived from
(seed, item id), so an item renders identically whether it appears as the
target or as a few-shot exemplar, and results do not depend on evaluation
order.  Items are scored and reported in task-file order.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass

import numpy as np

from .rng import Rng
from .tokenizer.vocab import BOS_ID, EOS_ID

LETTERS = "ABCD"
UNPARSED = "unparsed"
DEFAULT_HEADER = ("The following are multiple choice questions "
                  "(with answers) about Thai language knowledge.")
DEFAULT_CHAT_TEMPLATE = "<|user|>\n{prompt}\n<|assistant|>\n"
MAX_ANSWER_TOKENS = 10

_PUNCT = frozenset(string.punctuation)
_AFTER_LETTER = frozenset(".:)")


class EvalError(ValueError):
    pass


# ---------------------------------------------------------------- types ----

@dataclass(frozen=True)
class EvalItem:
    question: str
    options: tuple
    correct_index: int
    category: str = ""
    item_id: int = 0

    def __post_init__(self):
        if not isinstance(self.question, str) or not self.question:
            raise EvalError("question must be a non-empty string")
        opts = tuple(self.options)
        object.__setattr__(self, "options", opts)
        if len(opts) != 4 or not all(isinstance(o, str) for o in opts):
            raise EvalError("options must be exactly 4 strings")
        if len(set(opts)) != 4:
            raise EvalError("options must be distinct")
        if not isinstance(self.correct_index, int) \
                or isinstance(self.correct_index, bool) \
                or not 0 <= self.correct_index < 4:
            raise EvalError("correct_index must be in 0..3")


@dataclass(frozen=True)
class PromptInstance:
    text: str
    mapping: dict           # letter -> displayed option text
    gold_letter: str

    def __post_init__(self):
        if sorted(self.mapping) != list(LETTERS):
            raise EvalError("mapping must cover letters A-D")
        if self.gold_letter not in LETTERS:
            raise EvalError("gold letter must be one of A-D")


@dataclass(frozen=True)
class EvalReport:
    records: tuple
    accuracy: float
    n_shots: int
    seed: int
    mode: str
    unparsed: int

    def __post_init__(self):
        flags = [bool(r["correct"]) for r in self.records]
        mean = sum(flags) / len(flags) if flags else 0.0
        if abs(mean - self.accuracy) > 1e-12:
            raise EvalError("accuracy does not match per-item records")
        if not 0.0 <= self.accuracy <= 1.0:
            raise EvalError("accuracy out of range")

    def to_json(self) -> str:
        payload = {
            "accuracy": self.accuracy,
            "n_items": len(self.records),
            "n_shots": self.n_shots,
            "seed": self.seed,
            "mode": self.mode,
            "unparsed": self.unparsed,
            "records": list(self.records),
        }
        return json.dumps(payload, ensure_ascii=False, sort_keys=True,
                          indent=2)


# ------------------------------------------------------------- task file ----

def load_taskfile(path) -> list:
    """Reads JSONL items {question, options[4], answer, category?};
    raises one error listing every malformed line."""
    items, problems = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                problems.append(f"line {lineno}: invalid JSON ({exc.msg})")
                continue
            try:
                if not isinstance(obj, dict):
                    raise EvalError("not a JSON object")
                if not isinstance(obj.get("options"), list):
                    raise EvalError("options must be a list")
                items.append(EvalItem(
                    question=obj.get("question"),
                    options=tuple(obj["options"]),
                    correct_index=obj.get("answer"),
                    category=str(obj.get("category", "")),
                    item_id=len(items)))
            except EvalError as exc:
                problems.append(f"line {lineno}: {exc}")
    if problems:
        raise EvalError("malformed task file: " + "; ".join(problems))
    return items


# --------------------------------------------------------------- prompts ----

def option_permutation(seed: int, item_id: int) -> list:
    """Display order for an item's options: perm[i] is the original index
    shown at letter position i."""
    perm = list(range(4))
    Rng(seed).derive(item_id).shuffle(perm)
    return perm


def _render_block(item: EvalItem, perm, answer: bool) -> str:
    lines = [f"Question: {item.question}"]
    for pos, letter in enumerate(LETTERS):
        lines.append(f"{letter}. {item.options[perm[pos]]}")
    suffix = f" {LETTERS[perm.index(item.correct_index)]}" if answer else ""
    lines.append("Answer:" + suffix)
    return "\n".join(lines)


def build_prompt(item: EvalItem, fewshot, seed: int,
                 header: str = DEFAULT_HEADER,
                 chat_template: str | None = None) -> PromptInstance:
    fewshot = list(fewshot)
    for exemplar in fewshot:
        if exemplar.item_id == item.item_id:
            raise EvalError("few-shot exemplar equals the target item")
    pieces = [header]
    for exemplar in fewshot:
        ex_perm = option_permutation(seed, exemplar.item_id)
        pieces.append(_render_block(exemplar, ex_perm, answer=True))
    perm = option_permutation(seed, item.item_id)
    pieces.append(_render_block(item, perm, answer=False))
    text = "\n\n".join(pieces)
    if chat_template is not None:
        if "{prompt}" not in chat_template:
            raise EvalError("chat template must contain {prompt}")
        text = chat_template.replace("{prompt}", text)
    mapping = {LETTERS[pos]: item.options[perm[pos]] for pos in range(4)}
    gold = LETTERS[perm.index(item.correct_index)]
    return PromptInstance(text=text, mapping=mapping, gold_letter=gold)


# --------------------------------------------------------------- scoring ----

def _context_limit(model):
    config = getattr(model, "config", None)
    if config is not None and hasattr(config, "context_len"):
        return config.context_len
    return getattr(model, "context_len", None)


def generate_greedy(model, tokenizer, prompt_text: str,
                    max_new_tokens: int = MAX_ANSWER_TOKENS) -> list:
    """Argmax continuation token ids (ties -> lowest id); stops at EOS,
    which is never included in the result."""
    ids = [BOS_ID] + list(tokenizer.encode(prompt_text))
    limit = _context_limit(model)
    if limit is not None and len(ids) + max_new_tokens > limit:
        raise EvalError(
            f"prompt of {len(ids)} tokens leaves no room for "
            f"{max_new_tokens} generated tokens in context {limit}; "
            f"reduce the few-shot count")
    out = []
    for _ in range(max_new_tokens):
        logits = np.asarray(model.logits(ids))
        next_id = int(np.argmax(logits[-1]))
        if next_id == EOS_ID:
            break
        out.append(next_id)
        ids.append(next_id)
    return out


def match_choice(continuation_text: str) -> str:
    """First standalone A/B/C/D: preceded by start, whitespace, or
    punctuation; followed by end, whitespace, '.', ':', or ')'."""
    text = continuation_text
    for i, ch in enumerate(text):
        if ch not in LETTERS:
            continue
        before_ok = i == 0 or text[i - 1].isspace() or text[i - 1] in _PUNCT
        after = text[i + 1] if i + 1 < len(text) else None
        after_ok = after is None or after.isspace() or after in _AFTER_LETTER
        if before_ok and after_ok:
            return ch
    return UNPARSED


def score_loglikelihood(model, tokenizer, prompt_text: str, options) -> int:
    """Index of the option whose tokens (rendered as " " + option) get the
    highest total log-probability after the prompt.  No length
    normalization; ties go to the lowest index."""
    options = list(options)
    if not options:
        raise EvalError("no options to score")
    prompt_ids = [BOS_ID] + list(tokenizer.encode(prompt_text))
    limit = _context_limit(model)
    best_value, best_index = None, None
    for index, option in enumerate(options):
        cont_ids = list(tokenizer.encode(" " + option))
        if not cont_ids:
            raise EvalError(f"option {index} tokenizes to nothing")
        full = prompt_ids + cont_ids
        if limit is not None and len(full) > limit:
            raise EvalError(
                f"prompt plus option {index} is {len(full)} tokens, over "
                f"the context limit {limit}")
        logits = np.asarray(model.logits(full[:-1]), dtype=np.float64)
        total = 0.0
        for pos in range(len(prompt_ids), len(full)):
            row = logits[pos - 1]
            peak = float(row.max())
            lse = peak + float(np.log(np.sum(np.exp(row - peak))))
            total += float(row[full[pos]]) - lse
        if best_value is None or total > best_value:
            best_value, best_index = total, index
    return best_index


# ------------------------------------------------------------------ runs ----

def run_eval(model, tokenizer, taskfile, n_shots: int, seed: int,
             mode: str = "generate", chat_template: str | None = None,
             header: str = DEFAULT_HEADER) -> EvalReport:
    if mode not in ("generate", "loglik"):
        raise EvalError(f"mode must be generate or loglik, got {mode!r}")
    if n_shots < 0:
        raise EvalError("n_shots must be non-negative")
    items = taskfile if isinstance(taskfile, list) else load_taskfile(taskfile)
    if len(items) < n_shots + 1:
        raise EvalError(
            f"need at least {n_shots + 1} items for {n_shots}-shot eval, "
            f"got {len(items)}")
    records = []
    unparsed = 0
    for item in items:
        pool = [other for other in items if other.item_id != item.item_id]
        picks = Rng(seed).derive(item.item_id, "fewshot").sample(
            len(pool), n_shots)
        fewshot = [pool[k] for k in picks]
        prompt = build_prompt(item, fewshot, seed, header, chat_template)
        if mode == "generate":
            cont = generate_greedy(model, tokenizer, prompt.text)
            predicted = match_choice(tokenizer.decode(cont))
        else:
            displayed = [prompt.mapping[letter] for letter in LETTERS]
            predicted = LETTERS[score_loglikelihood(
                model, tokenizer, prompt.text, displayed)]
        if predicted == UNPARSED:
            unparsed += 1
        records.append({
            "item": item.item_id,
            "category": item.category,
            "predicted": predicted,
            "gold": prompt.gold_letter,
            "correct": predicted == prompt.gold_letter,
        })
    accuracy = sum(r["correct"] for r in records) / len(records)
    return EvalReport(records=tuple(records), accuracy=accuracy,
                      n_shots=n_shots, seed=seed, mode=mode,
                      unparsed=unparsed)
