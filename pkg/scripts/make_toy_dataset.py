#!/usr/bin/env python3
"""Generate a self-contained toy dataset (frames, labels, libraries, sensors).

Usage: python scripts/make_toy_dataset.py OUT_DIR [--frames N] [--boxes K] [--seed S]
"""

import argparse

from pseudoscan.toydata import make_toy_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out_dir")
    ap.add_argument("--frames", type=int, default=8)
    ap.add_argument("--boxes", type=int, default=2)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    ds = make_toy_dataset(args.out_dir, n_frames=args.frames, boxes_per_frame=args.boxes, seed=args.seed)
    print(f"dataset at {ds.root}")
    print(f"  manifest      {ds.manifest_path}")
    print(f"  labels        {ds.labels_dir}")
    print(f"  CAD library   {ds.cad_library}")
    print(f"  point library {ds.point_library}")
    print(f"  sensors       {ds.sensors_path}")
    print(f"  est stats     {ds.est_stats_path}")


if __name__ == "__main__":
    main()
