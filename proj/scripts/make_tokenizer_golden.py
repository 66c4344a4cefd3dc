#!/usr/bin/env python3
"""Build tests/fixtures/tokenizer_golden.json.

200 fixture sentences are encoded with the reference GPT-2 tokenizer from
`transformers`, loaded from the same vocab/merges files the C++ tokenizer
reads. Run once; the output is committed.
"""
import json
import random
import sys
from pathlib import Path

from transformers import GPT2Tokenizer

ROOT = Path(__file__).resolve().parents[1]

HAND_WRITTEN = [
    "Hello",
    "the boy has climbed up",
    "There are two children and their mother in the kitchen.",
    "The little boy has climbed up, on a three legged stool to get some cookies from the jar in the cupboard.",
    "the mother is drying dishes and the sink is overflowing",
    "she's not paying attention, isn't she?",
    "I don't know what he'd do if they'd've gone.",
    "We'll see; you're right, I'm sure it'll work.",
    "  leading spaces",
    "trailing spaces   ",
    "tabs\tbetween\twords",
    "new\nlines\n\nand more",
    "mixed \t\n whitespace  runs\n",
    "numbers 123 4567 89.01 and 2,500",
    "café naïve résumé",
    "“quoted” text — with dashes…",
    "emoji \U0001F600 and symbols © ™",
    "中文字符 mixed with English",
    "русский текст",
    "ALL CAPS SENTENCE HERE",
    "'s 't 're 've 'm 'll 'd at the start",
    "O'Brien's dog's bone",
    "punctuation!!! ??? ... ;;; :::",
    "url http://example.com/path?x=1&y=2",
    "email someone@example.org",
    "a",
    " ",
    "x  y",
    "under_score and hyphen-ated words",
    "(parenthetical) [bracketed] {braced}",
    "&=laughs the boy [: cookie] xxx",
    "1st 2nd 3rd 4th",
    "½ ⅓ ² ①",
    "tab at end\t",
    "multiple\n\n\nnewlines",
    "okay um uh well you know",
    "The stool is tipping over!",
    "water on the floor",
    "and the window is open",
    "curtains blowing",
]

SUBJECTS = ["the boy", "the girl", "the mother", "a woman", "the kids", "she", "he", "they", "the little one", "somebody"]
VERBS = ["is reaching for", "has climbed up to", "wants", "is washing", "dropped", "sees", "took", "is looking at", "grabbed", "ignores"]
OBJECTS = ["the cookie jar", "a plate", "the dishes", "the stool", "some cookies", "the sink", "water", "the curtains", "the window", "her sister"]
TAILS = [".", "!", "?", ", I think.", " and then fell.", " ... um", " you know", "'s what I see", " in the kitchen", "."]
PREFIXES = ["", "", "", "well ", "uh ", "okay ", "and ", "so ", "oh ", "I guess "]


def synth(rng):
    s = rng.choice(PREFIXES) + rng.choice(SUBJECTS) + " " + rng.choice(VERBS) + " " + rng.choice(OBJECTS) + rng.choice(TAILS)
    if rng.random() < 0.2:
        s = s.capitalize()
    if rng.random() < 0.1:
        s = s + " " + str(rng.randint(0, 99999))
    if rng.random() < 0.05:
        s = s.replace(" ", "  ", 1)
    return s


def main():
    rng = random.Random(20220526)
    sentences = list(HAND_WRITTEN)
    while len(sentences) < 200:
        s = synth(rng)
        if s not in sentences:
            sentences.append(s)
    tok = GPT2Tokenizer.from_pretrained(str(ROOT / "data/gpt2"))
    assert len(tok) == 50257
    cases = [{"text": s, "ids": tok.encode(s)} for s in sentences]
    out = {
        "reference": "transformers.GPT2Tokenizer",
        "eos_decoded": tok.decode([50256]),
        "cases": cases,
    }
    dest = Path(sys.argv[1]) if len(sys.argv) > 1 else ROOT / "tests/fixtures/tokenizer_golden.json"
    dest.write_text(json.dumps(out, ensure_ascii=True, indent=1) + "\n")
    print("wrote", dest, len(cases), "cases")


if __name__ == "__main__":
    main()
