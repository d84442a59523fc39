"""Deterministic synthetic fixtures: multilingual corpora and eval tasks.

Everything here is generated from embedded word banks through the package's
own RNG, so a given seed produces byte-identical files on any platform.  The
corpora are small but exercise the full pipeline: several scripts (Latin,
Thai, CJK, Arabic), digits, punctuation, emoji, multi-space indentation.
"""

from __future__ import annotations

import json
import os

from .rng import Rng

WORD_BANKS: dict[str, list[str]] = {
    "english": [
        "the", "quick", "brown", "fox", "jumps", "over", "lazy", "dog",
        "model", "training", "data", "language", "token", "vocabulary",
        "learning", "system", "compute", "network", "layer", "attention",
        "value", "query", "weight", "matrix", "batch", "sample", "loss",
        "gradient", "update", "small", "large", "desk", "scale", "test",
        "simple", "result", "number", "sequence", "context", "window",
    ],
    "french": [
        "le", "la", "modèle", "données", "langue", "apprentissage", "café",
        "être", "avoir", "très", "bien", "petit", "grand", "nombre", "mot",
        "texte", "réseau", "couche", "poids", "valeur", "exemple", "résultat",
        "fenêtre", "contexte", "séquence", "échelle", "système", "qualité",
    ],
    "thai": [
        "สวัสดี", "ข้อมูล", "ภาษา", "ไทย", "เรียนรู้", "แบบจำลอง", "คำ",
        "ตัวอักษร", "ระบบ", "ตัวอย่าง", "คุณภาพ", "ผลลัพธ์", "จำนวน",
        "เล็ก", "ใหญ่", "ดี", "มาก", "ครับ", "ค่ะ", "ทดสอบ", "เครือข่าย",
    ],
    "chinese": [
        "你好", "模型", "数据", "语言", "学习", "中文", "词", "字符",
        "系统", "例子", "质量", "结果", "数量", "小", "大", "好", "很",
        "测试", "网络", "训练", "上下文", "窗口", "规模",
    ],
    "arabic": [
        "مرحبا", "النموذج", "اللغة", "تعلم", "بيانات", "كلمة", "نظام",
        "مثال", "جودة", "نتيجة", "عدد", "صغير", "كبير", "جيد", "اختبار",
    ],
    "code": [
        "def", "return", "import", "class", "self", "value", "result",
        "index", "count", "data", "for", "in", "range", "len", "print",
        "if", "else", "while", "True", "False", "None", "list", "dict",
    ],
}

_EMOJI = ["😀", "🚀", "🌍", "✨", "🔥", "🎉", "🧪", "📚"]
_PUNCT = [".", "!", "?", ",", ";", ":"]


def _sentence(rng: Rng, source: str) -> str:
    bank = WORD_BANKS[source]
    n = 3 + rng.randint(8)
    words = [bank[rng.randint(len(bank))] for _ in range(n)]
    if source == "code":
        indent = " " * (2 * (1 + rng.randint(3)))  # 2/4/6-space indentation
        body = " ".join(words)
        line = f"{indent}{body}"
        if rng.uniform() < 0.5:
            line += f"({rng.randint(100)})"
        return line
    joiner = "" if source in ("thai", "chinese") else " "
    text = joiner.join(words)
    if rng.uniform() < 0.3:
        text += str(rng.randint(10000))
    if rng.uniform() < 0.15:
        text += _EMOJI[rng.randint(len(_EMOJI))]
    return text + _PUNCT[rng.randint(len(_PUNCT))]


def synthetic_documents(source: str, n_docs: int, seed: int) -> list[str]:
    """Deterministic documents for one named source."""
    if source not in WORD_BANKS:
        raise ValueError(f"unknown fixture source {source!r}; have {sorted(WORD_BANKS)}")
    rng = Rng(seed).derive("docs", source)
    docs = []
    for _ in range(n_docs):
        n_sent = 1 + rng.randint(4)
        sep = "\n" if rng.uniform() < 0.3 else " "
        docs.append(sep.join(_sentence(rng, source) for _ in range(n_sent)))
    return docs


def mixed_corpus(n_docs_per_source: int, seed: int) -> list[str]:
    """All sources interleaved — the default tokenizer-training corpus."""
    out = []
    for source in sorted(WORD_BANKS):
        out.extend(synthetic_documents(source, n_docs_per_source, seed))
    return out


# ---------------------------------------------------------------------------
# synthetic eval tasks (deterministically answerable multiple choice)


def synthetic_eval_items(n_items: int, seed: int) -> list[dict]:
    """Multiple-choice items with a known correct option at index `answer`."""
    rng = Rng(seed).derive("eval-items")
    items = []
    for i in range(n_items):
        kind = rng.randint(3)
        if kind == 0:
            a, b = 2 + rng.randint(40), 2 + rng.randint(40)
            question = f"What is {a} + {b}?"
            correct = a + b
            opts = {correct}
            while len(opts) < 4:
                opts.add(correct + rng.randint(21) - 10)
            options = sorted(opts)
            answer = options.index(correct)
            options = [str(x) for x in options]
            category = "arithmetic"
        elif kind == 1:
            nums = []
            while len(nums) < 4:
                x = rng.randint(900) + 10
                if x not in nums:
                    nums.append(x)
            question = "Which of these numbers is the largest?"
            answer = nums.index(max(nums))
            options = [str(x) for x in nums]
            category = "comparison"
        else:
            bank = WORD_BANKS["english"]
            picks = []
            while len(picks) < 4:
                w = bank[rng.randint(len(bank))]
                if w not in picks and (not picks or w[0] != picks[0][0] or len(picks) == 0):
                    picks.append(w)
            question = f'Which word starts with the letter "{picks[0][0]}"?'
            answer = 0
            options = picks
            category = "spelling"
        items.append({
            "id": f"item-{i:05d}",
            "question": question,
            "options": options,
            "answer": answer,
            "category": category,
        })
    return items


# ---------------------------------------------------------------------------
# on-disk fixture tree


def write_fixtures(out_dir: str, seed: int = 20240601,
                   n_docs: int = 120, n_eval: int = 200) -> dict:
    """Write the full fixture tree; returns a manifest of path -> count."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = {}

    for source in sorted(WORD_BANKS):
        path = os.path.join(out_dir, f"corpus_{source}.jsonl")
        docs = synthetic_documents(source, n_docs, seed)
        _write_jsonl(path, [{"id": f"{source}-{i:04d}", "source": source, "text": d}
                            for i, d in enumerate(docs)])
        manifest[path] = len(docs)

    heldout = []
    for source in sorted(WORD_BANKS):
        heldout.extend(synthetic_documents(source, max(10, n_docs // 10), seed + 1))
    path = os.path.join(out_dir, "heldout.jsonl")
    _write_jsonl(path, [{"id": f"held-{i:04d}", "text": d} for i, d in enumerate(heldout)])
    manifest[path] = len(heldout)

    # ~2 KB single-source corpus for overfitting smoke runs
    smoke_docs = []
    size = 0
    rng = Rng(seed).derive("smoke")
    while size < 2048:
        doc = _sentence(rng, "english")
        smoke_docs.append(doc)
        size += len(doc.encode("utf-8"))
    path = os.path.join(out_dir, "smoke.jsonl")
    _write_jsonl(path, [{"id": f"smoke-{i:04d}", "text": d} for i, d in enumerate(smoke_docs)])
    manifest[path] = len(smoke_docs)

    path = os.path.join(out_dir, "eval_task.jsonl")
    _write_jsonl(path, synthetic_eval_items(n_eval, seed))
    manifest[path] = n_eval
    return manifest


def _write_jsonl(path: str, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
