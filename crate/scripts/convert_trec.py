#!/usr/bin/env python3
"""Convert the TREC question classification files to the corpus format.

The original distribution (train_5500.label, TREC_10.label) has one question
per line, `COARSE:fine question text`, in Latin-1. The output is UTF-8 with
one `COARSE:fine<TAB>question text` line per example, matching the leaf names
in data/taxonomies/trec.tsv.

    python3 scripts/convert_trec.py train_5500.label trec-train.tsv
    python3 scripts/convert_trec.py TREC_10.label trec-test.tsv
"""

import argparse
import sys


def convert(src, dst):
    count = 0
    with open(src, encoding="latin-1") as fin, open(dst, "w", encoding="utf-8") as fout:
        for lineno, line in enumerate(fin, 1):
            line = line.strip()
            if not line:
                continue
            label, _, text = line.partition(" ")
            if ":" not in label or not text.strip():
                sys.exit(f"{src}:{lineno}: expected 'COARSE:fine text', got {line!r}")
            fout.write(f"{label}\t{text.strip()}\n")
            count += 1
    return count


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("src", help="TREC .label file")
    parser.add_argument("dst", help="output corpus file")
    args = parser.parse_args()
    print(f"{convert(args.src, args.dst)} examples written to {args.dst}")


if __name__ == "__main__":
    main()
