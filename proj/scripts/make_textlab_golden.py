#!/usr/bin/env python3
"""Build tests/fixtures/textlab_golden.json.

Word tokenization from NLTK's Treebank tokenizer and Welch t-tests from
scipy, used as oracles for the C++ lexical statistics. Sentences are split
on terminal punctuation followed by whitespace before the Treebank pass,
standing in for the Punkt splitter that nltk.word_tokenize would use.
"""
import json
import re
from pathlib import Path

import numpy as np
from nltk.tokenize import TreebankWordTokenizer
from scipy import stats

ROOT = Path(__file__).resolve().parents[1]

SENTENCES = [
    "the boy and the girl ran",
    "He doesn't know.",
    "she's looking out the window...",
    "the mother's dishes, and the boy is on the stool",
    "I can't, won't go!",
    "well, let me see. there's a lady. and she's washing.",
    "They're taking cookies; the jar is open.",
    "we'll see what I'd do if you've got time?",
    "the water is running over the sink and onto the floor",
    "cookie cookie cookie jar",
    "a three-legged stool is tipping over (badly)",
    "um the the girl is um reaching for a cookie and uh the stool is tipping",
    "It isn't there: it's gone",
    "Mom's busy drying plates and she doesn't notice",
    "Two children and their mother in the kitchen",
    "he's going to fall! she doesn't see it.",
    "they were 2 kids with 3 cookies",
    "I'm not sure, but I think that's all",
    "the curtains are blowing and the lawn is green",
    "what's happening here? nothing much.",
]


def welch_cases():
    rng = np.random.default_rng(20220526)
    cases = []
    for na, nb, shift, sa, sb in [(10, 12, 0.0, 1.0, 1.0), (30, 25, 0.4, 1.5, 0.7), (5, 40, -1.0, 0.3, 2.0),
                                  (50, 50, 0.1, 2.0, 2.1), (8, 9, 2.5, 0.5, 0.5), (100, 3, 0.0, 1.0, 4.0)]:
        a = (9.5 + rng.normal(0, sa, na)).round(6)
        b = (9.5 + shift + rng.normal(0, sb, nb)).round(6)
        r = stats.ttest_ind(a, b, equal_var=False)
        cases.append({"a": a.tolist(), "b": b.tolist(), "t": float(r.statistic), "df": float(r.df), "p": float(r.pvalue)})
    # equal means by construction
    a = [9.0, 10.0, 11.0]
    b = [8.0, 10.0, 12.0, 10.0]
    r = stats.ttest_ind(a, b, equal_var=False)
    cases.append({"a": a, "b": b, "t": float(r.statistic), "df": float(r.df), "p": float(r.pvalue)})
    return cases


def word_tokenize(tok, text):
    return [t for sent in re.split(r"(?<=[.!?])\s+", text) for t in tok.tokenize(sent)]


def main():
    tok = TreebankWordTokenizer()
    out = {
        "reference": "nltk TreebankWordTokenizer; scipy.stats.ttest_ind(equal_var=False)",
        "word_tokenize": [{"text": s, "tokens": word_tokenize(tok, s)} for s in SENTENCES],
        "welch": welch_cases(),
    }
    path = ROOT / "tests" / "fixtures" / "textlab_golden.json"
    path.write_text(json.dumps(out, indent=1) + "\n")
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
