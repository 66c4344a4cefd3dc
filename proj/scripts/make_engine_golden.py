#!/usr/bin/env python3
"""Build tests/fixtures/engine_golden.json.

A GPT-2 small shaped checkpoint is filled with the same deterministic values
as tests/support/seeded_model.hpp, loaded into the `transformers` GPT-2
implementation (float64), and used to score a set of probe texts. The C++
engine must reproduce the summed NLLs.
"""
import hashlib
import json
from pathlib import Path

import numpy as np
import torch
from transformers import GPT2Config, GPT2LMHeadModel, GPT2Tokenizer

ROOT = Path(__file__).resolve().parents[1]
SEED = 20220526
WEIGHT_SCALE = np.float32(0.1)

PROBES = [
    "Hello",
    "the boy has climbed up",
    "There are two children and their mother in the kitchen.",
    "The water is running over the sink and onto the floor while she dries a plate.",
    "um the the girl is um reaching for a cookie and uh the stool is tipping",
    "I see a window with curtains, a lawn outside, and some dishes on the counter.",
    "He's going to fall! She doesn't notice, she's looking out the window.",
    "1 2 3 ... numbers and symbols: $4.50, 100%, #tag",
    "well, let me see. there's a lady. and she's washing. and the kids are, uh, taking the cookies.",
    "A longer probe sentence describes an ordinary kitchen scene in some detail, "
    "mentioning the cupboard, the open cookie jar, the overflowing sink, the cups and "
    "plates, the garden path visible through the window, and the two children who "
    "seem quite busy with their plan while their mother looks elsewhere.",
]


def splitmix64(x):
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def expected_tensors(n_layers=12, d=768, vocab=50257, ctx=1024):
    out = [("wte.weight", (vocab, d)), ("wpe.weight", (ctx, d))]
    for l in range(n_layers):
        p = f"h.{l}."
        out += [
            (p + "ln_1.weight", (d,)), (p + "ln_1.bias", (d,)),
            (p + "attn.c_attn.weight", (d, 3 * d)), (p + "attn.c_attn.bias", (3 * d,)),
            (p + "attn.c_proj.weight", (d, d)), (p + "attn.c_proj.bias", (d,)),
            (p + "ln_2.weight", (d,)), (p + "ln_2.bias", (d,)),
            (p + "mlp.c_fc.weight", (d, 4 * d)), (p + "mlp.c_fc.bias", (4 * d,)),
            (p + "mlp.c_proj.weight", (4 * d, d)), (p + "mlp.c_proj.bias", (d,)),
        ]
    out += [("ln_f.weight", (d,)), ("ln_f.bias", (d,))]
    return out


def is_gain(name):
    return name.endswith("ln_1.weight") or name.endswith("ln_2.weight") or name == "ln_f.weight"


def seeded_tensors():
    tensors = {}
    counter = 0
    digest = hashlib.sha256()
    with np.errstate(over="ignore"):
        for name, shape in expected_tensors():
            n = int(np.prod(shape))
            c = np.arange(counter, counter + n, dtype=np.uint64) + np.uint64(SEED)
            counter += n
            u = (splitmix64(c) >> np.uint64(40)).astype(np.float32) * np.float32(2.0 ** -24)
            unit = u * np.float32(2.0) - np.float32(1.0)
            if is_gain(name):
                values = np.float32(1.0) + unit * np.float32(0.2)
            elif name.endswith(".bias"):
                values = unit * np.float32(0.05)
            else:
                values = unit * WEIGHT_SCALE
            values = values.astype(np.float32).reshape(shape)
            digest.update(values.tobytes())
            tensors[name] = values
    return tensors, digest.hexdigest()


def main():
    tensors, checksum = seeded_tensors()
    config = GPT2Config(n_embd=768, n_layer=12, n_head=12, n_positions=1024, vocab_size=50257,
                        layer_norm_epsilon=1e-5, activation_function="gelu_new",
                        resid_pdrop=0.0, embd_pdrop=0.0, attn_pdrop=0.0)
    model = GPT2LMHeadModel(config).double().eval()
    state = {"transformer." + k: torch.from_numpy(v.astype(np.float64)) for k, v in tensors.items()}
    state["lm_head.weight"] = state["transformer.wte.weight"]
    missing, unexpected = model.load_state_dict(state, strict=False)
    assert not unexpected, unexpected
    assert all(m.endswith("attn.bias") or m.endswith("masked_bias") for m in missing), missing

    tok = GPT2Tokenizer.from_pretrained(ROOT / "data" / "gpt2")
    probes = []
    with torch.no_grad():
        for text in PROBES:
            ids = [50256] + tok.encode(text)
            logits = model(torch.tensor([ids])).logits[0]
            lp = torch.log_softmax(logits, dim=-1)
            nll = -sum(float(lp[i, ids[i + 1]]) for i in range(len(ids) - 1))
            probes.append({"text": text, "ids": ids[1:], "nll_sum": nll, "tokens": len(ids) - 1})

    out = {
        "reference": "transformers GPT2LMHeadModel (float64)",
        "seed": SEED,
        "weight_scale": float(WEIGHT_SCALE),
        "weights_sha256": checksum,
        "probes": probes,
    }
    path = ROOT / "tests" / "fixtures" / "engine_golden.json"
    path.write_text(json.dumps(out, indent=2) + "\n")
    print(f"wrote {path} ({len(probes)} probes, weights {checksum[:12]})")


if __name__ == "__main__":
    main()
