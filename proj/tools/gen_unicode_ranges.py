#!/usr/bin/env python3
"""Regenerate src/unicode_ranges.inc: code point ranges for the letter,
number and whitespace classes used by the GPT-2 pre-tokenizer pattern.

    python tools/gen_unicode_ranges.py > src/unicode_ranges.inc
"""

import unicodedata

import regex


def ranges(pattern):
    pat = regex.compile(pattern)
    out, start = [], None
    for cp in range(0x110000):
        ok = not (0xD800 <= cp <= 0xDFFF) and pat.match(chr(cp)) is not None
        if ok and start is None:
            start = cp
        elif not ok and start is not None:
            out.append((start, cp - 1))
            start = None
    if start is not None:
        out.append((start, 0x10FFFF))
    return out


def emit(name, rs):
    print(f"constexpr CodeRange {name}[] = {{")
    line = " "
    for a, b in rs:
        item = f" {{0x{a:X}, 0x{b:X}}},"
        if len(line) + len(item) > 110:
            print(line)
            line = " "
        line += item
    print(line)
    print("};")


def main():
    print(f"// Generated by tools/gen_unicode_ranges.py (Unicode {unicodedata.unidata_version}); do not edit.")
    emit("kLetterRanges", ranges(r"\p{L}"))
    emit("kNumberRanges", ranges(r"\p{N}"))
    emit("kSpaceRanges", ranges(r"\s"))


if __name__ == "__main__":
    main()
