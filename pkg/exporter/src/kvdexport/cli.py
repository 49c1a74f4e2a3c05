"""Command line front end: kvd-export export --model ... --out file.kvd"""

from __future__ import annotations

import argparse
import sys

from .export import ExportError, ExportSpec, export_cache


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kvd-export")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export", help="export a model's KV cache to a .kvd file")
    p.add_argument("--model", required=True, help="model id or local path")
    p.add_argument("--text", help="UTF-8 text file to tokenize")
    p.add_argument("--tokens", help="JSON file with a list of token ids")
    p.add_argument("--ctx", type=int, required=True, help="context length N")
    p.add_argument("--cont", type=int, required=True, help="continuation length T")
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = ExportSpec(model_id=args.model, context_len=args.ctx,
                          cont_len=args.cont, out_path=args.out,
                          text_path=args.text, tokens_path=args.tokens)
        manifest = export_cache(spec)
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    shape = manifest["shape"]
    print(f"wrote {args.out}: {shape['num_layers']} layers, "
          f"{shape['num_q_heads']}q/{shape['num_kv_heads']}kv heads, "
          f"dim {shape['head_dim']}, ctx {manifest['context_len']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
