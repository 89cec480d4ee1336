"""`embed` command: raw CSV/JSONL -> preprocessed, encoded EMBD corpus.

The encoder sees the encoder-variant normalization; the corpus text field
stores the analysis variant (what keyword extraction expects). Records whose
encoder-variant text is empty after preprocessing are dropped and counted.
"""

from __future__ import annotations

import argparse
import sys
import traceback

import numpy as np

from .embd_writer import write_embd
from .encoders import load_encoder
from .preprocess import preprocess_analysis, preprocess_encoder
from .records import read_raw

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2


def convert(in_path: str, model: str, out_path: str, batch_size: int = 64) -> dict:
    records = read_raw(in_path)
    encoder = load_encoder(model)
    kept, encoder_texts, analysis_texts = [], [], []
    dropped = 0
    for rec in records:
        enc_text = preprocess_encoder(rec.text)
        if not enc_text:
            dropped += 1
            continue
        kept.append(rec)
        encoder_texts.append(enc_text)
        analysis_texts.append(preprocess_analysis(rec.text))
    if not kept:
        raise ValueError("no records left after preprocessing")
    chunks = [encoder.encode(encoder_texts[i:i + batch_size])
              for i in range(0, len(encoder_texts), batch_size)]
    emb = np.vstack(chunks)
    if emb.shape[1] != encoder.dim:
        raise RuntimeError(f"dimension inconsistency: encoder reports {encoder.dim}, "
                           f"produced {emb.shape[1]}")
    coords = np.array([[r.lat, r.lon] for r in kept])
    write_embd(out_path, [r.id for r in kept], emb, coords, analysis_texts)
    return {"n": len(kept), "d": int(encoder.dim), "dropped": dropped}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embed", description="Encode raw text + coordinates into a corpus file")
    parser.add_argument("--in", dest="in_path", required=True,
                        help="input CSV (id,text,lat,lon) or JSONL")
    parser.add_argument("--model", default="hash-64",
                        help="hash-<dim> or a sentence-transformers model name")
    parser.add_argument("--out", required=True, help="output .embd path")
    parser.add_argument("--batch-size", type=int, default=64)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        stats = convert(args.in_path, args.model, args.out, args.batch_size)
    except FileNotFoundError as exc:
        print(f"error: input file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL
    print(f"wrote {args.out} (n={stats['n']}, d={stats['d']}, "
          f"dropped={stats['dropped']})")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
