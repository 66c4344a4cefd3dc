#!/usr/bin/env python3
"""Write data/freq/wordfreq_en.tsv, a SUBTLEX-style word/count table.

SUBTLEXus itself is not redistributed here. This stand-in takes English
word frequencies from the `wordfreq` package and scales them to counts in
a 51-million-word corpus (the size of SUBTLEXus), so natural-log counts land
on a comparable scale. Pass a real SUBTLEX file to `gptd lexstats --freq`
to use that instead.
"""
from pathlib import Path

from wordfreq import get_frequency_dict

ROOT = Path(__file__).resolve().parents[1]
CORPUS_WORDS = 51_000_000
TOP = 60_000


def main():
    freqs = get_frequency_dict("en")
    rows = []
    for word, f in freqs.items():
        if not word.replace("'", "").replace("-", "").isalpha():
            continue
        count = round(f * CORPUS_WORDS)
        if count >= 1:
            rows.append((word, count))
    rows.sort(key=lambda r: (-r[1], r[0]))
    rows = rows[:TOP]
    out = ROOT / "data" / "freq" / "wordfreq_en.tsv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w") as fh:
        fh.write("Word\tFREQcount\n")
        for w, c in rows:
            fh.write(f"{w}\t{c}\n")
    print(f"wrote {out} ({len(rows)} words)")


if __name__ == "__main__":
    main()
