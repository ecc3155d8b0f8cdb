#!/usr/bin/env python3
"""Convert ITOP HDF5 archives into the native dataset layout.

Expects the point-cloud and labels archives for one view, e.g.:

    ITOP_side_train_point_cloud.h5   ITOP_side_train_labels.h5
    ITOP_side_test_point_cloud.h5    ITOP_side_test_labels.h5

and writes one directory per (subject, recording) with manifest.txt,
labels.txt, and a .sppc point file per frame:

    python3 itop_to_native.py --points ITOP_side_train_point_cloud.h5 \
        --labels ITOP_side_train_labels.h5 --out data/itop/

Frame ids in the archives look like "XX_YYYYY" (subject, frame index); all
frames of one subject form one recording. Joints with is_valid == 0 keep
their coordinates but are flagged invalid.
"""

import argparse
import struct
import sys
from collections import defaultdict
from pathlib import Path

import h5py
import numpy as np

NUM_JOINTS = 15


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--points", required=True, type=Path)
    ap.add_argument("--labels", required=True, type=Path)
    ap.add_argument("--out", required=True, type=Path)
    args = ap.parse_args()

    with h5py.File(args.points, "r") as pf, h5py.File(args.labels, "r") as lf:
        ids = [i.decode() for i in lf["id"][:]]
        coords = lf["real_world_coordinates"][:]  # (n, 15, 3)
        valid_joints = lf.get("is_valid_joints")
        valid_joints = valid_joints[:] if valid_joints is not None else None
        frame_valid = lf["is_valid"][:]
        clouds = pf["data"]

        by_subject = defaultdict(list)
        for idx, fid in enumerate(ids):
            subject = int(fid.split("_")[0])
            by_subject[subject].append(idx)

        for subject, indices in sorted(by_subject.items()):
            rdir = args.out / f"rec_{subject:02d}_00"
            rdir.mkdir(parents=True, exist_ok=True)
            lines = []
            for idx in indices:
                fid = ids[idx]
                pts = np.asarray(clouds[idx], dtype=np.float32).reshape(-1, 3)
                with open(rdir / f"{fid}.sppc", "wb") as f:
                    f.write(b"SPPC")
                    f.write(struct.pack("<I", len(pts)))
                    f.write(pts.astype("<f4").tobytes())
                joints = coords[idx].reshape(NUM_JOINTS, 3)
                if valid_joints is not None:
                    bits = "".join("1" if v else "0" for v in valid_joints[idx].reshape(-1)[:NUM_JOINTS])
                else:
                    bits = ("1" if frame_valid[idx] else "0") * NUM_JOINTS
                flat = ",".join(repr(float(v)) for v in joints.reshape(-1))
                lines.append(f"frame={fid} joints={flat} valid={bits}")
            (rdir / "labels.txt").write_text("\n".join(lines) + "\n")
            (rdir / "manifest.txt").write_text(
                f"subject={subject} recording=0 frames={len(indices)}\n"
            )
            print(f"subject {subject:02d}: {len(indices)} frames -> {rdir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
