#!/usr/bin/env python3
"""Regenerate the committed test fixtures under crates/core/tests/fixtures.

Everything here is produced by reference implementations (Hugging Face
`transformers` BertModel in eager attention mode, and the `tokenizers` WordPiece
pipeline) so the Rust test-suite can compare against values it did not compute
itself. Deterministic for a fixed --seed.

    python3 tools/make_fixtures.py [--seed 0]
"""

import argparse
import ast
import json
import os
import random
import re
import sys
import tempfile
from pathlib import Path

import numpy as np
import torch
from safetensors.numpy import save_file
from tokenizers import BertWordPieceTokenizer
from transformers import BertConfig, BertModel

ROOT = Path(__file__).resolve().parent.parent
OUT = ROOT / "crates" / "core" / "tests" / "fixtures"

SPECIALS = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]

TINY_WORDS = [
    "the", "a", "cat", "dog", "sat", "on", "mat", "for", "those", "who",
    "follow", "social", "media", "trans", "##ition", "##s", "capitol", "hill",
    ",", ".", "this", "will", "be", "little", "different", "is", "and", "of",
    "to", "in", "it", "was", "runs", "fast", "slow", "big", "small", "red",
    "blue", "##ing", "##ed", "un", "##happy", "man", "woman", "plays", "guitar",
    "piano", "eats", "food", "bird", "flies", "car", "drives", "road", "!",
    "?", "very", "happy",
]

TINY_CONFIG = {
    "hidden_size": 8,
    "num_layers": 2,
    "num_heads": 2,
    "head_dim": 4,
    "intermediate_size": 16,
    "vocab_size": 64,
    "max_position_embeddings": 32,
    "type_vocab_size": 2,
    "layer_norm_eps": 1e-12,
}

# Sentences encoded through the tiny model for the forward / pooling oracles.
TINY_SENTENCES = [
    "For those who follow social media transitions on Capitol Hill, this will be a little different.",
    "the cat sat on the mat.",
    "a man plays the guitar!",
    "dog",
    "the red car drives very fast on the big road.",
    "a small bird flies.",
]

PROBE_SENTENCE = "the cat sat on the mat."


class ReferenceTokenizer:
    """Uncased BERT WordPiece pipeline from the `tokenizers` library."""

    def __init__(self, vocab_file):
        self.inner = BertWordPieceTokenizer(str(vocab_file), lowercase=True, strip_accents=None,
                                            clean_text=True, handle_chinese_chars=True)

    def ids(self, text):
        return self.inner.encode(text).ids

    def token_id(self, token):
        return self.inner.token_to_id(token)


def tiny_vocab():
    vocab = SPECIALS + TINY_WORDS
    assert len(vocab) == len(set(vocab))
    assert len(vocab) == TINY_CONFIG["vocab_size"], len(vocab)
    return vocab


def tiny_weights(seed):
    """State dict (HF names) with seeded uniform(-0.1, 0.1) parameters.

    LayerNorm gains are 1 + uniform(-0.1, 0.1) so activations keep unit scale.
    """
    rng = np.random.RandomState(seed)
    cfg = TINY_CONFIG
    d, i, v = cfg["hidden_size"], cfg["intermediate_size"], cfg["vocab_size"]

    def u(*shape):
        return rng.uniform(-0.1, 0.1, size=shape).astype(np.float32)

    def gain(n):
        return (1.0 + rng.uniform(-0.1, 0.1, size=(n,))).astype(np.float32)

    w = {
        "embeddings.word_embeddings.weight": u(v, d),
        "embeddings.position_embeddings.weight": u(cfg["max_position_embeddings"], d),
        "embeddings.token_type_embeddings.weight": u(cfg["type_vocab_size"], d),
        "embeddings.LayerNorm.weight": gain(d),
        "embeddings.LayerNorm.bias": u(d),
    }
    for l in range(cfg["num_layers"]):
        p = f"encoder.layer.{l}."
        for name in ["query", "key", "value"]:
            w[p + f"attention.self.{name}.weight"] = u(d, d)
            w[p + f"attention.self.{name}.bias"] = u(d)
        w[p + "attention.output.dense.weight"] = u(d, d)
        w[p + "attention.output.dense.bias"] = u(d)
        w[p + "attention.output.LayerNorm.weight"] = gain(d)
        w[p + "attention.output.LayerNorm.bias"] = u(d)
        w[p + "intermediate.dense.weight"] = u(i, d)
        w[p + "intermediate.dense.bias"] = u(i)
        w[p + "output.dense.weight"] = u(d, i)
        w[p + "output.dense.bias"] = u(d)
        w[p + "output.LayerNorm.weight"] = gain(d)
        w[p + "output.LayerNorm.bias"] = u(d)
    return w


def reference_model(weights):
    cfg = TINY_CONFIG
    hf = BertConfig(
        vocab_size=cfg["vocab_size"],
        hidden_size=cfg["hidden_size"],
        num_hidden_layers=cfg["num_layers"],
        num_attention_heads=cfg["num_heads"],
        intermediate_size=cfg["intermediate_size"],
        max_position_embeddings=cfg["max_position_embeddings"],
        type_vocab_size=cfg["type_vocab_size"],
        layer_norm_eps=cfg["layer_norm_eps"],
        hidden_act="gelu",
        hidden_dropout_prob=0.0,
        attention_probs_dropout_prob=0.0,
        attn_implementation="eager",
    )
    model = BertModel(hf, add_pooling_layer=False)
    state = {k: torch.from_numpy(v.copy()) for k, v in weights.items()}
    missing, unexpected = model.load_state_dict(state, strict=False)
    assert not unexpected, unexpected
    assert all("position_ids" in m for m in missing), missing
    model.eval()
    return model.double()


def run(model, ids):
    with torch.no_grad():
        x = torch.tensor([ids], dtype=torch.long)
        out = model(
            input_ids=x,
            attention_mask=torch.ones_like(x),
            token_type_ids=torch.zeros_like(x),
            output_hidden_states=True,
            output_attentions=True,
        )
    hidden = [h[0].numpy().astype(np.float32) for h in out.hidden_states]
    attn = [a[0].numpy().astype(np.float32) for a in out.attentions]
    return hidden, attn


def write_tiny_model(seed):
    model_dir = OUT / "tiny_model"
    model_dir.mkdir(parents=True, exist_ok=True)
    vocab = tiny_vocab()
    (model_dir / "vocab.txt").write_text("\n".join(vocab) + "\n", encoding="utf-8")
    (model_dir / "config.json").write_text(json.dumps(TINY_CONFIG, indent=2) + "\n")
    weights = tiny_weights(seed)
    save_file(weights, str(model_dir / "model.safetensors"))
    tok = ReferenceTokenizer(model_dir / "vocab.txt")
    return weights, tok


def pool_all(hidden, attn, head):
    """Reference poolers over all tokens (specials included), float64."""
    h0 = hidden[0].astype(np.float64)
    hl = hidden[-1].astype(np.float64)
    layer, h = head
    diag = np.diag(attn[layer - 1][h - 1]).astype(np.float64)
    return {
        "static_avg": h0.mean(axis=0),
        "last_avg": hl.mean(axis=0),
        "first_last_avg": (h0 + hl).mean(axis=0) / 2.0,
        "static_ditto": (diag[:, None] * h0).sum(axis=0),
        "last_ditto": (diag[:, None] * hl).sum(axis=0),
        "first_last_ditto": 0.5 * (diag[:, None] * (h0 + hl)).sum(axis=0),
    }


def write_oracles(model, tok):
    oracle = OUT / "oracle"
    oracle.mkdir(parents=True, exist_ok=True)
    meta = []
    pooled = {}
    for k, text in enumerate(TINY_SENTENCES):
        ids = tok.ids(text)
        hidden, attn = run(model, ids)
        tensors = {"ids": np.array(ids, dtype=np.float32)}
        for l, h in enumerate(hidden):
            tensors[f"hidden.{l}"] = h
        for l, a in enumerate(attn):
            tensors[f"attention.{l + 1}"] = a
        save_file(tensors, str(oracle / f"forward_{k}.safetensors"))
        meta.append({"text": text, "ids": ids})
        for name, vec in pool_all(hidden, attn, (1, 2)).items():
            pooled.setdefault(name, []).append(vec.astype(np.float32))
    save_file({k: np.stack(v) for k, v in pooled.items()}, str(oracle / "pooled_head_1_2.safetensors"))
    (oracle / "sentences.json").write_text(json.dumps(meta, indent=2, ensure_ascii=False) + "\n")

    # Perturbed-masking impact matrix by the direct two-loop definition.
    ids = tok.ids(PROBE_SENTENCE)
    mask_id = tok.token_id("[MASK]")
    real = list(range(1, len(ids) - 1))
    m = len(real)
    f = np.zeros((m, m), dtype=np.float64)
    for a, i in enumerate(real):
        x1 = list(ids)
        x1[i] = mask_id
        h1 = run(model, x1)[0][-1][i].astype(np.float64)
        for b, j in enumerate(real):
            x2 = list(x1)
            x2[j] = mask_id
            h2 = run(model, x2)[0][-1][i].astype(np.float64)
            f[a, b] = np.linalg.norm(h1 - h2)
    save_file({"impact": f.astype(np.float32), "ids": np.array(ids, dtype=np.float32)},
              str(oracle / "impact.safetensors"))


# --- tokenizer parity -------------------------------------------------------

def english_sentences(limit):
    """Plain English sentences harvested from stdlib docstrings."""
    out = []
    seen = set()
    libdir = Path(os.__file__).parent
    for path in sorted(libdir.glob("*.py")):
        try:
            tree = ast.parse(path.read_text(encoding="utf-8"))
        except Exception:
            continue
        for node in ast.walk(tree):
            if not isinstance(node, (ast.Module, ast.FunctionDef, ast.ClassDef, ast.AsyncFunctionDef)):
                continue
            doc = ast.get_docstring(node)
            if not doc:
                continue
            text = " ".join(doc.split())
            for s in re.split(r"(?<=[.!?])\s+", text):
                words = s.split()
                if not (6 <= len(words) <= 30):
                    continue
                if sum(c.isalpha() for c in s) < 0.7 * len(s):
                    continue
                if "[" in s or s in seen:
                    continue
                seen.add(s)
                out.append(s)
    return out[:limit]


EDGE_CASES = [
    "For those who follow social media transitions on Capitol Hill, this will be a little different.",
    "transitions",
    "Café au lait, naïve résumé, and a piñata at the Élysée.",
    "Ångström units measure ÅÄÖ distances; façade and coöperate too.",
    "北京 is the capital of 中国 and 東京 is in 日本.",
    "Mixed 漢字かなカナ text with 한국어 characters.",
    "Tabs\tand\nnewlines\r\nare whitespace.",
    "Control\u0007chars\u0000vanish​here�too.",
    "Zero width and no-break spaces　split words.",
    "Emoji 😀 and symbols ★ ☃ → ∑ ∫ √ appear!",
    "Punctuation: (brackets) [squares] {braces} <angles> \"quotes\" 'single' `tick`.",
    "Hyphenated-words, under_scores, slashes/paths and back\\slashes.",
    "Numbers 3.14159, 1,000,000 and 42nd or 7th place; version v2.0.1.",
    "URLs like https://example.com/a?b=c&d=e#frag break apart.",
    "Email me at someone@example.org or call +1 (555) 010-9999.",
    "Supercalifragilisticexpialidocious is a long word; pneumonoultramicroscopicsilicovolcanoconiosis longer.",
    "a" * 120 + " overlong token should become unknown.",
    "ALL CAPS SENTENCE WITH SHOUTING!!!",
    "Don't won't can't shouldn't y'all o'clock.",
    "Greek Σίσυφος and ΟΔΥΣΣΕΥΣ go to Ἀθῆναι.",
    "Cyrillic Москва and Ελλάδα and ﬁ ligature ﬂow.",
    "Math: x² + y² = z², ½ of ¾ is ⅜.",
    "   leading and trailing spaces   ",
    "...",
    "¿Qué tal? ¡Muy bien! «Guillemets» and „quotes“.",
    "Dashes – en — em ‐ hyphen ‒ figure.",
    "The price is $5.99, €4,50 or £3 — cheap!",
    "Soft­hyphen and zero‍width joiner inside words.",
    "İstanbul and DİYARBAKIR have dotted capitals.",
    "Full-width ＡＢＣ１２３ and half-width ｶﾀｶﾅ forms.",
]


def write_tokenizer_parity(seed):
    tdir = OUT / "tokenizer"
    tdir.mkdir(parents=True, exist_ok=True)
    corpus = english_sentences(6000)
    rng = random.Random(seed)
    training = corpus + EDGE_CASES
    with tempfile.TemporaryDirectory() as tmp:
        corpus_file = Path(tmp) / "corpus.txt"
        corpus_file.write_text("\n".join(training) + "\n", encoding="utf-8")
        trainer = BertWordPieceTokenizer(lowercase=True, strip_accents=None, clean_text=True,
                                         handle_chinese_chars=True)
        trainer.train([str(corpus_file)], vocab_size=3000, min_frequency=2,
                      special_tokens=SPECIALS, limit_alphabet=300)
        vocab = sorted(trainer.get_vocab().items(), key=lambda kv: kv[1])
    # Drop a few CJK/accented single characters so [UNK] paths get exercised.
    tokens = [t for t, _ in vocab]
    for t in ["東", "京", "한", "##한", "😀", "★"]:
        if t in tokens:
            tokens.remove(t)
    (tdir / "vocab.txt").write_text("\n".join(tokens) + "\n", encoding="utf-8")

    tok = ReferenceTokenizer(tdir / "vocab.txt")
    picked = rng.sample(corpus, 200 - len(EDGE_CASES))
    sentences = EDGE_CASES + picked
    assert len(sentences) == 200
    with open(tdir / "parity.jsonl", "w", encoding="utf-8") as fh:
        for s in sentences:
            ids = tok.ids(s)
            fh.write(json.dumps({"text": s, "ids": ids}, ensure_ascii=False) + "\n")
    return corpus


# --- synthetic STS layout and TF-IDF corpus -------------------------------

TASKS = ["STS12", "STS13", "STS14", "STS15", "STS16", "STSB", "SICKR"]


def write_sts(seed):
    rng = random.Random(seed + 1)
    root = OUT / "sts"
    nouns = ["cat", "dog", "man", "woman", "bird", "car"]
    verbs = {"cat": "sat on the mat", "dog": "runs fast", "man": "plays the guitar",
             "woman": "plays the piano", "bird": "flies", "car": "drives on the road"}
    adjs = ["big", "small", "red", "blue", "little", "happy"]

    def sentence(noun):
        adj = rng.choice(adjs)
        return f"the {adj} {noun} {verbs[noun]}."

    def pairs(n):
        rows = []
        for _ in range(n):
            a = rng.choice(nouns)
            if rng.random() < 0.5:
                b, score = a, round(rng.uniform(3.0, 5.0), 2)
            else:
                b = rng.choice([x for x in nouns if x != a])
                score = round(rng.uniform(0.0, 2.0), 2)
            rows.append(f"{score}\t{sentence(a)}\t{sentence(b)}")
        return rows

    for task in TASKS:
        tdir = root / task
        tdir.mkdir(parents=True, exist_ok=True)
        subsets = ["main"] if task in ("STSB", "SICKR") else ["news", "forum"]
        for sub in subsets:
            (tdir / f"{sub}.test.tsv").write_text("\n".join(pairs(12)) + "\n", encoding="utf-8")
        if task == "STSB":
            (tdir / "main.dev.tsv").write_text("\n".join(pairs(20)) + "\n", encoding="utf-8")
            (tdir / "main.train.tsv").write_text("", encoding="utf-8")

    corpus = []
    for _ in range(200):
        corpus.append(sentence(rng.choice(nouns)))
    (OUT / "tfidf_corpus.txt").write_text("\n".join(corpus) + "\n", encoding="utf-8")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    torch.manual_seed(args.seed)
    OUT.mkdir(parents=True, exist_ok=True)
    weights, tok = write_tiny_model(args.seed)
    model = reference_model(weights)
    write_oracles(model, tok)
    write_tokenizer_parity(args.seed)
    write_sts(args.seed)
    print(f"fixtures written to {OUT}")


if __name__ == "__main__":
    sys.exit(main())
