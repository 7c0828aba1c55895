#!/usr/bin/env python3
"""Convert externally exported encoder weights into a loadable archive.

Inputs: a tensor archive of externally named weights (export each named
tensor from its source ecosystem into the TARCH1 format first), a
name-mapping TSV (`external<TAB>internal`, see README for the internal
naming scheme), and the model configuration file. Writes a full model
archive usable with `handover-ie train --pretrained`.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from handover_ie.encoder import EncoderModel, ModelConfig, import_pretrained, save_model


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--archive", required=True, help="external-name tensor archive")
    parser.add_argument("--mapping", required=True, help="external<TAB>internal names")
    parser.add_argument("--config", required=True, help="model config key=value file")
    parser.add_argument("--out", required=True, help="output model archive")
    parser.add_argument("--seed", type=int, default=0,
                        help="init seed for tensors not covered by the mapping")
    args = parser.parse_args()

    config = ModelConfig.from_text(Path(args.config).read_text(encoding="utf-8"))
    model = EncoderModel(config, seed=args.seed)
    imported = import_pretrained(model, args.archive, args.mapping)
    save_model(model, args.out)
    print(f"imported {len(imported)} tensors; wrote {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
