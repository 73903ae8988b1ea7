#!/usr/bin/env python3
"""Convert the LINQS Cora release (cora.content / cora.cites) into sfgl text formats.

The original files ship inside the `pgl` wheel on PyPI:

    pip download --no-deps pgl==2.2.6
    python3 -c "import zipfile,glob; z=zipfile.ZipFile(glob.glob('pgl-*.whl')[0]); \
        [z.extract(n, '.') for n in z.namelist() if n.startswith('pgl/data/cora/')]"
    python3 scripts/prepare_cora.py pgl/data/cora data/cora

Outputs (node ids follow the line order of cora.content):
    features.coo   coo-text bag-of-words matrix (2708 x 1433)
    labels.txt     "node_id class_id"
    cites.edges    "src dst" citing -> cited
    classes.txt    class id -> class name
    paper_ids.txt  node id -> original paper id
"""
import os
import sys


def main(src, dst):
    os.makedirs(dst, exist_ok=True)
    rows = []
    with open(os.path.join(src, "cora.content")) as fh:
        for line in fh:
            parts = line.split()
            if parts:
                rows.append(parts)
    ids = [r[0] for r in rows]
    index = {pid: i for i, pid in enumerate(ids)}
    classes = sorted({r[-1] for r in rows})
    n_cols = len(rows[0]) - 2

    entries = []
    for i, r in enumerate(rows):
        for c, v in enumerate(r[1:-1]):
            if float(v) != 0.0:
                entries.append((i, c, v))
    with open(os.path.join(dst, "features.coo"), "w") as fh:
        fh.write(f"{len(rows)} {n_cols} {len(entries)}\n")
        for i, c, v in entries:
            fh.write(f"{i} {c} {float(v):g}\n")

    with open(os.path.join(dst, "labels.txt"), "w") as fh:
        for i, r in enumerate(rows):
            fh.write(f"{i} {classes.index(r[-1])}\n")
    with open(os.path.join(dst, "classes.txt"), "w") as fh:
        for c, name in enumerate(classes):
            fh.write(f"{c} {name}\n")
    with open(os.path.join(dst, "paper_ids.txt"), "w") as fh:
        for i, pid in enumerate(ids):
            fh.write(f"{i} {pid}\n")

    edges = set()
    with open(os.path.join(src, "cora.cites")) as fh:
        for line in fh:
            parts = line.split()
            if len(parts) != 2:
                continue
            cited, citing = parts
            if cited in index and citing in index and cited != citing:
                edges.add((index[citing], index[cited]))
    with open(os.path.join(dst, "cites.edges"), "w") as fh:
        for s, d in sorted(edges):
            fh.write(f"{s} {d}\n")
    print(f"{len(rows)} nodes, {n_cols} features, {len(entries)} nonzeros, "
          f"{len(classes)} classes, {len(edges)} citation edges")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
