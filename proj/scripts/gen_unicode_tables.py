#!/usr/bin/env python3
"""Emit src/unicode_tables.inc: code point ranges for \\p{L}, \\p{N} and \\s.

Classification uses the `regex` module, the same engine the reference GPT-2
tokenizer uses for its pre-tokenization pattern.
"""
import sys

import regex

CLASSES = {
    "kLetterRanges": regex.compile(r"\p{L}"),
    "kNumberRanges": regex.compile(r"\p{N}"),
    "kSpaceRanges": regex.compile(r"\s"),
}


def ranges(pattern):
    out = []
    start = None
    for cp in range(0x110000):
        if 0xD800 <= cp <= 0xDFFF:
            hit = False
        else:
            hit = pattern.match(chr(cp)) is not None
        if hit and start is None:
            start = cp
        elif not hit and start is not None:
            out.append((start, cp - 1))
            start = None
    if start is not None:
        out.append((start, 0x10FFFF))
    return out


def main():
    dest = sys.argv[1] if len(sys.argv) > 1 else "src/unicode_tables.inc"
    with open(dest, "w", encoding="ascii") as f:
        f.write("// Generated by scripts/gen_unicode_tables.py (regex %s). Do not edit.\n" % regex.__version__)
        for name, pattern in CLASSES.items():
            rs = ranges(pattern)
            f.write("inline constexpr CodepointRange %s[] = {\n" % name)
            for lo, hi in rs:
                f.write("    {0x%X, 0x%X},\n" % (lo, hi))
            f.write("};\n")


if __name__ == "__main__":
    main()
