"""File formats: CSV matrices, 16-bit PGM masks, PPM images, key=value configs."""

from __future__ import annotations

import csv
import os
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, InputError

FLOAT_FMT = "%.17g"


def write_embedding_csv(path, X) -> None:
    """``D,N`` header line, then D rows of N values."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    with open(path, "w") as fh:
        fh.write(f"{X.shape[0]},{X.shape[1]}\n")
        np.savetxt(fh, X, delimiter=",", fmt=FLOAT_FMT)


def read_embedding_csv(path) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        try:
            d, n = (int(v) for v in header)
        except ValueError:
            raise InputError(f"{path}: first line must be 'D,N'") from None
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape != (d, n):
        raise InputError(f"{path}: header says {(d, n)}, found {data.shape}")
    return data


def write_pgm16(path, image) -> None:
    img = np.asarray(image)
    if img.ndim != 2:
        raise InputError("PGM image must be 2-D")
    if img.min() < 0 or img.max() > 65535:
        raise InputError("PGM values must fit in 16 bits")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(img.astype(">u2").tobytes())


def _read_header_tokens(data: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while data[pos : pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode("ascii"))
    return tokens, pos + 1


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    (magic, w, h, maxval), offset = _read_header_tokens(data, 4)
    if magic != "P5":
        raise InputError(f"{path}: not a binary PGM")
    w, h, maxval = int(w), int(h), int(maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(data, dtype=dtype, count=w * h, offset=offset).reshape(h, w).astype(np.int64)


def write_ppm(path, rgb) -> None:
    """Write an ``(H, W, 3)`` image with values in [0, 1]."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise InputError("PPM image must have shape (H, W, 3)")
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.round(np.clip(rgb, 0, 1) * 255).astype(np.uint8).tobytes())


def write_labels_csv(path, labels) -> None:
    np.savetxt(path, np.asarray(labels, dtype=np.int64), fmt="%d")


def read_labels_csv(path) -> np.ndarray:
    return np.loadtxt(path, dtype=np.int64, ndmin=1)


def write_table(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def read_table(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def dump_trajectory(directory, traj) -> None:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    for t, X in enumerate(traj.states):
        write_embedding_csv(out / f"state_t{t}.csv", X)
    write_table(
        out / "losses.csv",
        ["loop", "value", "positive_term", "negative_term"],
        [(t, r.value, r.positive_term, r.negative_term) for t, r in enumerate(traj.per_loop_losses)],
    )


def save_net(path, net) -> None:
    with open(path, "w") as fh:
        for name, value in net.params.items():
            mat = np.atleast_2d(value) if value.ndim == 2 else value[:, None]
            fh.write(f"{name},{mat.shape[0]},{mat.shape[1]}\n")
            np.savetxt(fh, mat, delimiter=",", fmt=FLOAT_FMT)


def load_net(path):
    from .toy import PerPixelNet

    params = {}
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    i = 0
    while i < len(lines):
        name, rows, cols = lines[i].split(",")
        rows, cols = int(rows), int(cols)
        block = np.array([[float(v) for v in ln.split(",")] for ln in lines[i + 1 : i + 1 + rows]])
        if block.shape != (rows, cols):
            raise InputError(f"{path}: block {name} is malformed")
        params[name] = block[:, 0] if name.startswith("b") else block
        i += 1 + rows
    return PerPixelNet(**params)


def write_proposals(directory, proposals, width: int, height: int) -> None:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for k, (mask, beta) in enumerate(zip(proposals.masks, proposals.betas)):
        name = f"proposal_{k:03d}.pgm"
        write_pgm16(out / name, mask.reshape(height, width).astype(np.uint16))
        rows.append((name, float(beta), int(np.count_nonzero(mask))))
    write_table(out / "proposals.csv", ["mask_file", "beta", "pixel_count"], rows)


def parse_config(path) -> dict:
    """Flat ``key=value`` lines; ``#`` starts a comment."""
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            if not key:
                raise ConfigError(f"{path}:{lineno}: empty key")
            values[key] = value
    return values


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
