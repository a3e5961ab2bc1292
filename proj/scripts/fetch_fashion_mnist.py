#!/usr/bin/env python3
"""Fetch Fashion-MNIST and write a stratified IDX subset for the desk runs.

Tries the official gzipped IDX mirrors first; on network failure falls back
to the `fashion-mnist` npm package (per-class JSON pixel dumps), which many
offline mirrors carry. Either way the output is a seed-stratified subset in
standard IDX format:

    <out>/train-images-idx3-ubyte
    <out>/train-labels-idx1-ubyte

Default: 800 images per class (8000 total), seed 42.
"""

import argparse
import gzip
import json
import random
import shutil
import struct
import subprocess
import sys
import tarfile
import tempfile
import urllib.request
from pathlib import Path

OFFICIAL_BASES = [
    "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/",
    "https://github.com/zalandoresearch/fashion-mnist/raw/master/data/fashion/",
]
IMAGES_GZ = "train-images-idx3-ubyte.gz"
LABELS_GZ = "train-labels-idx1-ubyte.gz"
NUM_CLASSES = 10
SIDE = 28


def log(msg: str) -> None:
    print(f"[fetch_fashion_mnist] {msg}", flush=True)


def read_idx_images(raw: bytes) -> list[bytes]:
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != 0x803 or rows != SIDE or cols != SIDE:
        raise ValueError(f"unexpected IDX image header: {magic:#x} {count}x{rows}x{cols}")
    body = raw[16:]
    if len(body) != count * rows * cols:
        raise ValueError("truncated IDX image payload")
    n = rows * cols
    return [body[i * n : (i + 1) * n] for i in range(count)]


def read_idx_labels(raw: bytes) -> list[int]:
    magic, count = struct.unpack(">II", raw[:8])
    if magic != 0x801:
        raise ValueError(f"unexpected IDX label header: {magic:#x}")
    body = raw[8:]
    if len(body) != count:
        raise ValueError("truncated IDX label payload")
    return list(body)


def try_official() -> tuple[list[bytes], list[int]] | None:
    for base in OFFICIAL_BASES:
        try:
            log(f"trying {base}")
            with urllib.request.urlopen(base + IMAGES_GZ, timeout=30) as r:
                images = read_idx_images(gzip.decompress(r.read()))
            with urllib.request.urlopen(base + LABELS_GZ, timeout=30) as r:
                labels = read_idx_labels(gzip.decompress(r.read()))
            if len(images) != len(labels):
                raise ValueError("image/label count mismatch")
            return images, labels
        except Exception as e:  # noqa: BLE001 - fall through to the next mirror
            log(f"mirror failed: {e}")
    return None


def try_npm() -> tuple[list[bytes], list[int]] | None:
    """npm package `fashion-mnist` ships src/clothes/<c>.json: {"data": [[784 px]]}."""
    with tempfile.TemporaryDirectory() as tmp:
        try:
            log("falling back to the fashion-mnist npm package")
            subprocess.run(
                ["npm", "pack", "fashion-mnist@1.1.0"],
                cwd=tmp, check=True, capture_output=True, timeout=600,
            )
            (tarball,) = Path(tmp).glob("fashion-mnist-*.tgz")
            with tarfile.open(tarball) as tf:
                tf.extractall(tmp)
        except Exception as e:  # noqa: BLE001
            log(f"npm fallback failed: {e}")
            return None
        images: list[bytes] = []
        labels: list[int] = []
        for c in range(NUM_CLASSES):
            path = Path(tmp, "package", "src", "clothes", f"{c}.json")
            rows = json.loads(path.read_text())["data"]
            kept = 0
            for px in rows:
                if len(px) != SIDE * SIDE:  # the dump carries a few stray empties
                    continue
                images.append(bytes(px))
                labels.append(c)
                kept += 1
            if kept < 1000:
                raise ValueError(f"class {c}: only {kept} usable rows")
        return images, labels


def stratified_subset(
    images: list[bytes], labels: list[int], per_class: int, seed: int
) -> tuple[list[bytes], list[int]]:
    by_class: list[list[int]] = [[] for _ in range(NUM_CLASSES)]
    for i, lab in enumerate(labels):
        by_class[lab].append(i)
    rng = random.Random(seed)
    chosen: list[int] = []
    for c, pool in enumerate(by_class):
        if len(pool) < per_class:
            raise SystemExit(f"class {c} has only {len(pool)} examples (< {per_class})")
        chosen.extend(rng.sample(pool, per_class))
    rng.shuffle(chosen)
    return [images[i] for i in chosen], [labels[i] for i in chosen]


def write_idx(out_dir: Path, images: list[bytes], labels: list[int]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    img_path = out_dir / "train-images-idx3-ubyte"
    lab_path = out_dir / "train-labels-idx1-ubyte"
    with open(img_path, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), SIDE, SIDE))
        for img in images:
            f.write(img)
    with open(lab_path, "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))
    log(f"wrote {img_path} ({img_path.stat().st_size} bytes)")
    log(f"wrote {lab_path} ({lab_path.stat().st_size} bytes)")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="data/fashion", type=Path)
    ap.add_argument("--per-class", default=800, type=int)
    ap.add_argument("--seed", default=42, type=int)
    args = ap.parse_args()

    img_path = args.out / "train-images-idx3-ubyte"
    if img_path.exists():
        log(f"{img_path} already exists; delete it to re-fetch")
        return 0

    data = try_official() or try_npm()
    if data is None:
        log("all sources failed; check network access or fetch the IDX files manually")
        return 1
    images, labels = data
    log(f"source corpus: {len(images)} examples")
    sub_images, sub_labels = stratified_subset(images, labels, args.per_class, args.seed)
    write_idx(args.out, sub_images, sub_labels)
    if shutil.which("npm") is None:
        log("note: npm unavailable; only official mirrors were usable")
    return 0


if __name__ == "__main__":
    sys.exit(main())
