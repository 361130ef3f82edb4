"""Command line: repshare-export --model <spec> --stages <comma-list>
--batch <file> --out <dir>."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .export import ExportError, export, load_model


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="repshare-export", description=__doc__)
    parser.add_argument("--model", required=True,
                        help="model spec 'package.module:attr' (module or factory)")
    parser.add_argument("--stages", required=True,
                        help="comma-separated module names marking stage boundaries")
    parser.add_argument("--batch", required=True, help="evaluation batch, .npy (n,C,H,W)")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--name", default=None, help="model name (default: spec attr)")
    args = parser.parse_args(argv)
    try:
        model, default_name = load_model(args.model)
        batch = np.load(args.batch)
        index = export(
            model,
            [s.strip() for s in args.stages.split(",") if s.strip()],
            np.asarray(batch, dtype=np.float32),
            args.out,
            model_name=args.name or default_name,
        )
    except ExportError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except OSError as exc:
        sys.stderr.write(f"i/o error: {exc}\n")
        return 3
    print(f"exported to {index}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
