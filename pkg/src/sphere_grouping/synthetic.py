"""Seeded generators: the 1-D Gaussian toy and small multi-shape scenes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InfeasiblePlacement, InputError
from .geometry import normalize_columns
from .loss import InstanceLabeling

NUM_FEATURES = 5
MAX_PLACEMENT_ATTEMPTS = 1000

# Well-separated shape colors; background uses its own fixed gray.
PALETTE = np.array(
    [
        [0.9, 0.1, 0.1],
        [0.1, 0.8, 0.1],
        [0.1, 0.2, 0.9],
        [0.9, 0.9, 0.1],
        [0.1, 0.9, 0.9],
        [0.9, 0.1, 0.9],
    ]
)
BACKGROUND_COLOR = np.array([0.45, 0.45, 0.45])


@dataclass(frozen=True)
class GaussianMixSpec:
    """Components ``(mu, sigma, count)`` and the target label of each component."""

    components: tuple
    labels: tuple

    def __post_init__(self):
        comps = tuple((float(m), float(s), int(c)) for m, s, c in self.components)
        if not comps:
            raise InputError("need at least one component")
        if any(s < 0 or c < 1 for _, s, c in comps):
            raise InputError("sigma must be >= 0 and counts positive")
        if len(self.labels) != len(comps):
            raise InputError("one label per component is required")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "labels", tuple(int(v) for v in self.labels))

    @classmethod
    def three_bumps(cls, count: int = 100) -> GaussianMixSpec:
        # the middle component is sent to the upper target
        return cls(((3.0, 0.2, count), (4.0, 0.3, count), (5.0, 0.1, count)), (1, 2, 2))


def gen_1d_gaussians(spec: GaussianMixSpec, seed: int = 0):
    """Return ``(points, labels)``; components are drawn in listed order."""
    rng = np.random.default_rng(seed)
    points, labels = [], []
    for (mu, sigma, count), label in zip(spec.components, spec.labels):
        points.append(mu + sigma * rng.standard_normal(count))
        labels.append(np.full(count, label, dtype=np.int64))
    return np.concatenate(points), np.concatenate(labels)


@dataclass(frozen=True)
class Shape:
    """Disc ``(cx, cy, r)`` or axis-aligned rectangle ``(x0, y0, x1, y1)`` in pixels."""

    kind: str
    params: tuple
    color: tuple

    def mask(self, width: int, height: int) -> np.ndarray:
        yy, xx = np.mgrid[0:height, 0:width]
        if self.kind == "disc":
            cx, cy, r = self.params
            return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
        if self.kind == "rectangle":
            x0, y0, x1, y1 = self.params
            return (xx >= x0) & (xx <= x1) & (yy >= y0) & (yy <= y1)
        raise InputError(f"unknown shape kind {self.kind!r}")


@dataclass(frozen=True)
class ShapeSceneSpec:
    width: int = 24
    height: int = 24
    num_shapes: int = 2
    kinds: tuple = ("disc", "rectangle")
    noise: float = 0.05
    seed: int = 0
    min_visible: float = 0.5  # fraction of each shape that must stay unoccluded
    shapes: Optional[tuple] = None  # explicit placement, overrides random draws

    def __post_init__(self):
        if self.width < 4 or self.height < 4:
            raise InputError("canvas must be at least 4x4")
        if self.shapes is None and self.num_shapes < 1:
            raise InputError("num_shapes must be >= 1")
        if self.shapes is None and self.num_shapes > len(PALETTE):
            raise InputError(f"at most {len(PALETTE)} shapes are supported")
        if self.noise < 0:
            raise InputError("noise must be non-negative")


@dataclass
class Scene:
    features: np.ndarray  # (5, H*W), row-major pixel order
    labels: InstanceLabeling
    width: int
    height: int
    colors: np.ndarray  # clean per-pixel colors, (3, H*W)

    @property
    def mask_image(self) -> np.ndarray:
        return self.labels.labels.reshape(self.height, self.width)


def _random_shape(rng, spec: ShapeSceneSpec, color) -> Shape:
    w, h = spec.width, spec.height
    small = min(w, h)
    kind = spec.kinds[rng.integers(len(spec.kinds))]
    if kind == "disc":
        r = rng.uniform(0.15, 0.3) * small
        cx = rng.uniform(r, w - 1 - r)
        cy = rng.uniform(r, h - 1 - r)
        return Shape("disc", (cx, cy, r), tuple(color))
    sw = int(rng.integers(int(0.3 * w), int(0.6 * w) + 1))
    sh = int(rng.integers(int(0.3 * h), int(0.6 * h) + 1))
    x0 = int(rng.integers(0, w - sw + 1))
    y0 = int(rng.integers(0, h - sh + 1))
    return Shape("rectangle", (x0, y0, x0 + sw - 1, y0 + sh - 1), tuple(color))


def _paint(shapes: Sequence[Shape], width: int, height: int) -> np.ndarray:
    ids = np.zeros((height, width), dtype=np.int64)
    for k, shape in enumerate(shapes, start=1):
        ids[shape.mask(width, height)] = k
    return ids


def _placement_ok(shapes, width, height, min_visible) -> bool:
    ids = _paint(shapes, width, height)
    for k, shape in enumerate(shapes, start=1):
        area = np.count_nonzero(shape.mask(width, height))
        visible = np.count_nonzero(ids == k)
        if area == 0 or visible < max(1, min_visible * area):
            return False
    return True


def gen_instance_scene(spec: ShapeSceneSpec) -> Scene:
    """Render a scene; later shapes occlude earlier ones, background id is 0.

    Pixel features are ``(x, y, r, g, b)`` mapped from [0, 1] onto [-1, 1],
    plus isotropic Gaussian noise of standard deviation ``spec.noise``.
    """
    rng = np.random.default_rng(spec.seed)
    w, h = spec.width, spec.height
    if spec.shapes is not None:
        shapes = list(spec.shapes)
    else:
        colors = PALETTE[rng.permutation(len(PALETTE))[: spec.num_shapes]]
        shapes = []
        for color in colors:
            for _ in range(MAX_PLACEMENT_ATTEMPTS):
                candidate = _random_shape(rng, spec, color)
                if _placement_ok(shapes + [candidate], w, h, spec.min_visible):
                    shapes.append(candidate)
                    break
            else:
                raise InfeasiblePlacement(
                    f"could not place shape {len(shapes) + 1} in {MAX_PLACEMENT_ATTEMPTS} attempts"
                )
    painted = _paint(shapes, w, h).ravel()
    # explicit shapes may be fully hidden; renumber the visible ones 1..m
    visible = np.unique(painted[painted > 0])
    remap = np.zeros(len(shapes) + 1, dtype=np.int64)
    remap[visible] = np.arange(1, visible.size + 1)
    ids = remap[painted]

    table = np.vstack([BACKGROUND_COLOR] + [np.asarray(s.color, dtype=float) for s in shapes])
    colors = table[painted].T
    yy, xx = np.mgrid[0:h, 0:w]
    coords = np.vstack([xx.ravel() / (w - 1), yy.ravel() / (h - 1)])
    features = 2.0 * np.vstack([coords, colors]) - 1.0
    if spec.noise > 0:
        features = features + spec.noise * rng.standard_normal(features.shape)
    return Scene(features, InstanceLabeling(ids), w, h, colors)


def gen_scene_set(
    count: int,
    seed: int,
    width: int = 24,
    height: int = 24,
    min_shapes: int = 2,
    max_shapes: int = 3,
    noise: float = 0.05,
) -> list:
    """A reproducible list of scenes with a random number of shapes each."""
    rng = np.random.default_rng(seed)
    scenes = []
    for _ in range(count):
        k = int(rng.integers(min_shapes, max_shapes + 1))
        s = int(rng.integers(0, 2**31 - 1))
        spec = ShapeSceneSpec(width=width, height=height, num_shapes=k, noise=noise, seed=s)
        scenes.append(gen_instance_scene(spec))
    return scenes


def spherical_clusters(
    seed: int,
    dim: int = 4,
    sizes: Sequence[int] = (20, 20, 20),
    spread: float = 0.15,
):
    """Points around well separated unit centers; returns ``(X, labels)``.

    Up to ``dim`` centers are placed as a regular simplex inside a random
    rotation, so any two centers have cosine ``-1 / (k - 1)``.
    """
    rng = np.random.default_rng(seed)
    k = len(sizes)
    if k > dim:
        raise InputError("at most dim simplex centers fit")
    simplex = np.eye(k) - 1.0 / k
    basis, _ = np.linalg.qr(rng.standard_normal((dim, k)))
    centers = normalize_columns(basis @ simplex) if k > 1 else basis[:, :1]
    cols, labels = [], []
    for c, size in enumerate(sizes):
        pts = centers[:, [c]] + spread * rng.standard_normal((dim, size))
        cols.append(normalize_columns(pts))
        labels.append(np.full(size, c, dtype=np.int64))
    return np.hstack(cols), np.concatenate(labels)
