# Copyright (C) 2026 The poscond Authors
# SPDX-License-Identifier: Apache-2.0
"""Writes tests/data/gpt2_fixture: a small randomly initialised GPT-2 with the
real GPT-2 vocabulary, plus token ids and logits computed by Hugging Face
transformers. The vocabulary files stay in tests/data/gpt2_tokenizer. The C++ loader, tokenizer and forward pass are checked against it.
"""
import json
import pathlib

import torch
from transformers import GPT2Config, GPT2LMHeadModel, GPT2Tokenizer
from safetensors.torch import save_file

ROOT = pathlib.Path(__file__).resolve().parent.parent
TOK = ROOT / "tests" / "data" / "gpt2_tokenizer"
OUT = ROOT / "tests" / "data" / "gpt2_fixture"

WINDOWS = [
    ["Once", "upon", "a"],
    ["the", "extraordinary", "rabbit", "ran", "past"],
    ["It's", "2024,", "and", "naïve", "café-goers", "don't", "care!"],
    ["Alice", "was", "beginning", "to", "get", "very", "tired", "of", "sitting", "by"],
]
TOKENIZER_CASES = [
    "the",
    "extraordinary",
    "Hello world",
    "  spaced   out\n\nlines",
    "I'll've they're WE'RE",
    "3.14159 and 1,000,000",
    "naïve café ünïcödé 日本語",
    "emoji 🙂 ok",
]


def main():
    torch.manual_seed(20240607)
    cfg = GPT2Config(n_layer=2, n_embd=16, n_head=2, n_positions=64, vocab_size=50257,
                     resid_pdrop=0.0, embd_pdrop=0.0, attn_pdrop=0.0)
    model = GPT2LMHeadModel(cfg).eval()
    # Stored as float16; the reference logits use the rounded weights.
    with torch.no_grad():
        for p in model.parameters():
            p.copy_(p.half().float() * 4.0)
    OUT.mkdir(parents=True, exist_ok=True)
    state = {k: v.half().contiguous() for k, v in model.transformer.state_dict().items()
             if not k.endswith(".attn.bias") and not k.endswith(".attn.masked_bias")}
    save_file(state, str(OUT / "model.safetensors"))
    cfg.to_json_file(str(OUT / "config.json"))

    tok = GPT2Tokenizer(str(TOK / "vocab.json"), str(TOK / "merges.txt"))
    model = model.double()
    cases = []
    for words in WINDOWS:
        ids = []
        spans = []
        for i, w in enumerate(words):
            piece = tok.encode(("" if i == 0 else " ") + w)
            spans.append([len(ids), len(ids) + len(piece)])
            ids += piece
        assert ids == tok.encode(" ".join(words))
        with torch.no_grad():
            out = model(torch.tensor([ids]), output_hidden_states=True)
        logits = out.logits[0, -1]
        best = int(torch.argmax(logits))
        cases.append({
            "words": words,
            "token_ids": ids,
            "spans": spans,
            "argmax": best,
            "argmax_logit": float(logits[best]),
            "logits_head": [float(x) for x in logits[:32]],
            "logit_sum": float(logits.sum()),
        })
    tokenizer_cases = [{"text": t, "ids": tok.encode(t)} for t in TOKENIZER_CASES]
    (OUT / "expected.json").write_text(json.dumps(
        {"windows": cases, "tokenizer": tokenizer_cases}, indent=1, ensure_ascii=False) + "\n")


if __name__ == "__main__":
    main()
