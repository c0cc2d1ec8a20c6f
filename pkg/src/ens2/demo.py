"""Bundled synthetic demo datasets for end-to-end runs and tests.

Three small classification tasks with deliberately different structure:
a linearly separable task, an interaction (XOR-style) task that defeats
linear models, and a mixed-type task with missing cells.  The CSV
files are checked into the package; `write_demo_data` regenerates them
byte-identically.
"""

from __future__ import annotations

import csv
import io
from importlib import resources
from pathlib import Path

import numpy as np

DEMO_TARGET = "label"
DEMO_NAMES = ("linsep", "xor", "catmix")


def demo_data_dir() -> Path:
    return Path(str(resources.files("ens2").joinpath("demo_data")))


def demo_path(name: str) -> Path:
    if name not in DEMO_NAMES:
        raise KeyError(f"unknown demo dataset {name!r}")
    return demo_data_dir() / f"{name}.csv"


def _csv_bytes(header: list[str], rows: list[list[str]]) -> bytes:
    out = io.StringIO(newline="")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return out.getvalue().encode("utf-8")


def linsep_csv(n: int = 120) -> bytes:
    """Two gaussian blobs, comfortably separable by a line."""
    rng = np.random.default_rng(2024_01)
    rows = []
    for i in range(n):
        cls = i % 2
        center = 1.2 if cls else -1.2
        x1 = rng.normal(center, 0.6)
        x2 = rng.normal(center, 0.6)
        rows.append([f"{x1:.4f}", f"{x2:.4f}", "pos" if cls else "neg"])
    return _csv_bytes(["x1", "x2", DEMO_TARGET], rows)


def xor_csv(n: int = 240, flip: float = 0.0, margin: float = 0.12) -> bytes:
    """Quadrant-product labels: no linear separator, easy for trees.

    Points keep a margin band clear of both axes so the quadrant
    boundary is not decided by a handful of borderline rows."""
    rng = np.random.default_rng(2024_02)
    rows = []
    for _ in range(n):
        x1 = float(rng.uniform(margin, 1.0) * rng.choice([-1.0, 1.0]))
        x2 = float(rng.uniform(margin, 1.0) * rng.choice([-1.0, 1.0]))
        cls = int(x1 * x2 > 0)
        if rng.uniform() < flip:
            cls = 1 - cls
        rows.append([f"{x1:.4f}", f"{x2:.4f}", "b" if cls else "a"])
    return _csv_bytes(["x1", "x2", DEMO_TARGET], rows)


def catmix_csv(n: int = 360, missing: float = 0.04) -> bytes:
    """Mixed-type three-class task with missing cells.

    The label follows two ordered bands over an oblique combination of
    hue and size, except that one categorical level (triangle) rotates
    the classes — representable by trees and neighbors but not by a
    single linear map.  Two extra numeric columns carry no signal, so
    each model family earns its errors in a different region."""
    rng = np.random.default_rng(2024_03)
    classes = ("blue", "green", "red")
    band, oblique, p_tri = 0.55, 0.55, 0.2
    rows = []
    for i in range(n):
        r = rng.uniform()
        if r < p_tri:
            shape = "triangle"
        else:
            shape = "circle" if r < p_tri + (1 - p_tri) / 2 else "square"
        hue = float(rng.normal(0.0, 1.2))
        size = float(rng.normal(0.0, 1.2))
        u = hue + oblique * size
        base = 0 if u > band else (2 if u < -band else 1)
        if shape == "triangle":
            base = (base + 1) % 3
        tint = float(rng.normal(0.0, 1.2))
        grain = float(rng.normal(0.0, 1.2))
        cells = [shape, f"{hue:.4f}", f"{size:.4f}", f"{tint:.4f}", f"{grain:.4f}"]
        for j in range(len(cells)):
            if rng.uniform() < missing:
                cells[j] = ""
        rows.append(cells + [classes[base]])
    return _csv_bytes(["shape", "hue", "size", "tint", "grain", DEMO_TARGET], rows)


GENERATORS = {
    "linsep": linsep_csv,
    "xor": xor_csv,
    "catmix": catmix_csv,
}


def write_demo_data(out_dir: str | Path | None = None) -> list[Path]:
    out_dir = Path(out_dir) if out_dir is not None else demo_data_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name in DEMO_NAMES:
        path = out_dir / f"{name}.csv"
        path.write_bytes(GENERATORS[name]())
        written.append(path)
    return written


if __name__ == "__main__":
    for p in write_demo_data():
        print(p)
