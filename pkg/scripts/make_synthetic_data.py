#!/usr/bin/env python3
"""Emit a planted-structure KG (N-Triples) and affinity dataset (TSV) for CLI runs.

Example:
    python scripts/make_synthetic_data.py --out-dir data --seed 0
    kgdta pretrain --graph data/planted.nt --seed 0 --out data/ckpt.json ...
"""

import argparse
from pathlib import Path

from kgdta.downstream import save_affinity_tsv
from kgdta.schema import to_ntriples
from kgdta.synthetic import make_planted_world


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", default="data")
    parser.add_argument("--drugs", type=int, default=60)
    parser.add_argument("--proteins", type=int, default=40)
    parser.add_argument("--latent-dim", type=int, default=8)
    parser.add_argument("--edge-density", type=float, default=0.3)
    parser.add_argument("--kg-pair-fraction", type=float, default=0.5)
    parser.add_argument("--noise", type=float, default=0.0)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    world = make_planted_world(
        n_drugs=args.drugs,
        n_proteins=args.proteins,
        latent_dim=args.latent_dim,
        edge_density=args.edge_density,
        kg_pair_fraction=args.kg_pair_fraction,
        noise=args.noise,
        seed=args.seed,
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    kg_path = out / "planted.nt"
    kg_path.write_text(to_ntriples(world.graph), encoding="utf-8", newline="\n")
    n_edges = sum(1 for t in world.graph.triples() if t.relation.name == "binding_to")
    print(f"wrote {kg_path}: {len(world.graph.nodes)} nodes, {n_edges} binding edges")
    if world.dataset is not None:
        ds_path = out / "affinity.tsv"
        save_affinity_tsv(world.dataset, str(ds_path))
        print(f"wrote {ds_path}: {len(world.dataset.rows)} rows")
    else:
        print("kg-pair-fraction=1.0: no affinity rows to write")


if __name__ == "__main__":
    main()
