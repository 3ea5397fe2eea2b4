"""Paired hazy/clean data from the atmospheric scattering model.

    I(x) = J(x) T(x) + A (1 - T(x)),    T(x) = exp(-beta D(x))

Depth is relative (arbitrary units); beta is in inverse depth units.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.optimize import brentq

from .errors import ParameterError, ShapeError
from .imageio import read_gray, read_image, write_depth, write_image
from .prior import dark_channel_density

log = logging.getLogger(__name__)

N_INTENSITIES = 8
IMAGE_SUFFIXES = (".png", ".ppm", ".jpg", ".jpeg", ".bmp")


@dataclass
class HazeScene:
    J: np.ndarray  # (C, H, W) in [0, 1]
    D: np.ndarray  # (H, W) >= 0
    beta: float
    A: np.ndarray | float = 1.0

    def __post_init__(self):
        self.J = np.asarray(self.J, dtype=np.float64)
        self.D = np.asarray(self.D, dtype=np.float64)
        self.A = np.broadcast_to(np.asarray(self.A, dtype=np.float64).reshape(-1), (self.J.shape[0],)).copy()
        if self.J.ndim != 3 or self.D.shape != self.J.shape[1:]:
            raise ShapeError(f"clean image {self.J.shape} and depth {self.D.shape} are not congruent")
        if self.beta < 0:
            raise ParameterError(f"beta must be >= 0, got {self.beta}")
        if np.any(self.D < 0):
            raise ParameterError("depth must be nonnegative")
        if np.any(self.A < 0) or np.any(self.A > 1):
            raise ParameterError("atmospheric light must lie in [0, 1]")


def transmission(depth: np.ndarray, beta: float) -> np.ndarray:
    return np.exp(-beta * np.asarray(depth, dtype=np.float64))


def synthesize(scene: HazeScene) -> np.ndarray:
    t = transmission(scene.D, scene.beta)[None]
    a = scene.A[:, None, None]
    hazy = scene.J * t + a * (1.0 - t)
    # convex combination of values in [0, 1]; clip only guards rounding
    assert hazy.min() >= -1e-12 and hazy.max() <= 1 + 1e-12
    return np.clip(hazy, 0.0, 1.0)


def depth_map(kind: str, height: int, width: int, d_min: float = 0.5, d_max: float = 3.0,
              path=None) -> np.ndarray:
    """Synthetic or file-backed relative depth, rescaled to [d_min, d_max].

    linear-ramp: rises from the top row (d_min) to the bottom row (d_max).
    radial: d_min at the centre, d_max at the farthest corner.
    from-file: single-channel image, normalized then rescaled.
    """
    if height < 1 or width < 1:
        raise ParameterError("depth map dimensions must be positive")
    if d_min >= d_max:
        raise ParameterError(f"d_min ({d_min}) must be < d_max ({d_max})")
    if d_min < 0:
        raise ParameterError("depth must be nonnegative")
    if kind == "linear-ramp":
        ramp = np.linspace(0.0, 1.0, height) if height > 1 else np.zeros(1)
        unit = np.repeat(ramp[:, None], width, axis=1)
    elif kind == "radial":
        yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
        cy, cx = (height - 1) / 2, (width - 1) / 2
        r = np.hypot(yy - cy, xx - cx)
        unit = r / r.max() if r.max() > 0 else r
    elif kind == "from-file":
        if path is None:
            raise ParameterError("from-file depth needs a path")
        unit = read_gray(path)
        if unit.shape != (height, width):
            raise ShapeError(f"depth file is {unit.shape}, expected {(height, width)}")
    else:
        raise ParameterError(f"unknown depth kind {kind!r}")
    return d_min + (d_max - d_min) * unit


def mean_ramp_transmission(beta: float, d_min: float, d_max: float) -> float:
    if beta == 0:
        return 1.0
    return (np.exp(-beta * d_min) - np.exp(-beta * d_max)) / (beta * (d_max - d_min))


def default_betas(d_min: float = 0.5, d_max: float = 3.0, t_light: float = 0.95,
                  t_dense: float = 0.15, n: int = N_INTENSITIES) -> np.ndarray:
    """n log-spaced betas whose mean ramp transmission spans [t_dense, t_light]."""
    lo = brentq(lambda b: mean_ramp_transmission(b, d_min, d_max) - t_light, 1e-9, 100.0)
    hi = brentq(lambda b: mean_ramp_transmission(b, d_min, d_max) - t_dense, 1e-9, 100.0)
    return np.geomspace(lo, hi, n)


def intensity_series(J, D, A, betas) -> list[np.ndarray]:
    betas = np.asarray(betas, dtype=np.float64)
    if np.any(betas < 0) or np.any(np.diff(betas) <= 0):
        raise ParameterError("betas must be nonnegative and strictly increasing")
    return [synthesize(HazeScene(J, D, float(b), A)) for b in betas]


class IntensityBin(enum.Enum):
    LIGHT = "light"
    MEDIUM = "medium"
    DENSE = "dense"


def _check_quantiles(quantiles) -> tuple[float, float]:
    q1, q2 = quantiles
    if not 0 < q1 < q2 < 1:
        raise ParameterError(f"quantiles must satisfy 0 < q1 < q2 < 1, got {quantiles}")
    return q1, q2


def bin_by_intensity(scores, quantiles=(0.183, 0.817)) -> list[IntensityBin]:
    """Rank-based split: the lowest round(q1*n) scores are light, ranks up to
    round(q2*n) medium, the rest dense.  Ties are ordered by sample index."""
    q1, q2 = _check_quantiles(quantiles)
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.size
    order = np.lexsort((np.arange(n), scores))
    n1, n2 = int(round(q1 * n)), int(round(q2 * n))
    labels = [IntensityBin.DENSE] * n
    for rank, i in enumerate(order):
        labels[i] = IntensityBin.LIGHT if rank < n1 else IntensityBin.MEDIUM if rank < n2 else IntensityBin.DENSE
    return labels


def bin_thresholds(scores, quantiles=(0.183, 0.817)) -> tuple[float, float]:
    """Score values at the two bin boundaries (last light, last medium sample)."""
    q1, q2 = _check_quantiles(quantiles)
    s = np.sort(np.asarray(scores, dtype=np.float64))
    n = s.size
    n1, n2 = int(round(q1 * n)), int(round(q2 * n))
    return float(s[max(n1 - 1, 0)]), float(s[max(n2 - 1, 0)])


def synthetic_scene(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Procedural clean image: coloured gradients, soft blobs and fine texture, (3, H, W)."""
    yy, xx = np.mgrid[0:height, 0:width] / max(height, width)
    img = np.empty((3, height, width))
    base = rng.uniform(0.1, 0.6, size=3)
    grad = rng.uniform(-0.3, 0.3, size=(3, 2))
    for c in range(3):
        img[c] = base[c] + grad[c, 0] * yy + grad[c, 1] * xx
    for _ in range(rng.integers(3, 7)):
        cy, cx = rng.uniform(0, 1, size=2)
        rad = rng.uniform(0.05, 0.25)
        colour = rng.uniform(-0.4, 0.4, size=3)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * rad * rad))
        img += colour[:, None, None] * blob
    texture = gaussian_filter(rng.normal(size=(height, width)), sigma=1.0)
    img += 0.08 * texture / (np.abs(texture).max() + 1e-12)
    return np.clip(img, 0.02, 0.9)


@dataclass
class SynthConfig:
    scenes: int = 8
    size: int = 64
    seed: int = 0
    depth: str = "linear-ramp"
    d_min: float = 0.5
    d_max: float = 3.0
    betas: list[float] = field(default_factory=list)
    test_fraction: float = 0.25
    quantiles: tuple[float, float] = (0.183, 0.817)
    a_min: float = 0.7
    a_max: float = 1.0
    dc_window: int = 15
    image_format: str = "png"

    def resolved_betas(self) -> np.ndarray:
        if self.betas:
            return np.asarray(self.betas, dtype=np.float64)
        return default_betas(self.d_min, self.d_max)


@dataclass
class PairRecord:
    scene_id: str
    clean: str
    hazy: str
    beta: float
    bin: str
    split: str

    def line(self) -> str:
        return f"{self.scene_id}, {self.clean}, {self.hazy}, {self.beta:.9g}, {self.bin}, {self.split}"


MANIFEST_HEADER = "# scene_id, clean, hazy, beta, bin, split"


def scene_split(scene_ids: list[str], test_fraction: float, seed: int) -> dict[str, str]:
    """Whole scenes go to one split; assignment depends only on (ids, fraction, seed)."""
    if not 0 <= test_fraction < 1:
        raise ParameterError("test_fraction must lie in [0, 1)")
    ids = sorted(scene_ids)
    perm = np.random.default_rng([seed, 7919]).permutation(len(ids))
    n_test = int(round(test_fraction * len(ids)))
    test = {ids[i] for i in perm[:n_test]}
    return {s: "test" if s in test else "train" for s in ids}


def make_dataset(out_dir, config: SynthConfig | None = None, clean_dir=None) -> Path:
    """Write clean/hazy/depth files and a manifest; returns the manifest path.

    With `clean_dir`, every readable image there becomes a scene (sorted by
    name); undecodable files are logged as ``! path: reason`` lines in the
    manifest and skipped.  Without it, `config.scenes` procedural scenes
    are generated.
    """
    cfg = config or SynthConfig()
    out = Path(out_dir)
    for sub in ("clean", "hazy", "depth"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    betas = cfg.resolved_betas()
    ext = "." + cfg.image_format

    sources: list[tuple[str, np.ndarray | None, str | None]] = []
    if clean_dir is not None:
        for path in sorted(Path(clean_dir).iterdir()):
            if path.suffix.lower() not in IMAGE_SUFFIXES:
                continue
            try:
                sources.append((path.stem, read_image(path), None))
            except Exception as exc:  # noqa: BLE001 - any decode failure is recorded
                sources.append((path.stem, None, f"{path}: {exc}"))
    else:
        for i in range(cfg.scenes):
            rng = np.random.default_rng([cfg.seed, i])
            sources.append((f"scene_{i:04d}", synthetic_scene(rng, cfg.size, cfg.size), None))

    errors = [err for _, img, err in sources if img is None]
    good = [(sid, img) for sid, img, _ in sources if img is not None]
    split = scene_split([sid for sid, _ in good], cfg.test_fraction, cfg.seed)

    records: list[PairRecord] = []
    scores: list[float] = []
    for idx, (sid, clean) in enumerate(good):
        rng = np.random.default_rng([cfg.seed, idx, 1])
        h, w = clean.shape[1:]
        depth = depth_map(cfg.depth, h, w, cfg.d_min, cfg.d_max)
        a = rng.uniform(cfg.a_min, cfg.a_max)
        clean_rel = f"clean/{sid}{ext}"
        write_image(out / clean_rel, clean)
        write_depth(out / "depth" / f"{sid}.png", depth, cfg.d_min, cfg.d_max)
        for k, (beta, hazy) in enumerate(zip(betas, intensity_series(clean, depth, a, betas))):
            hazy_rel = f"hazy/{sid}_i{k}{ext}"
            write_image(out / hazy_rel, hazy)
            scores.append(dark_channel_density(hazy, cfg.dc_window))
            records.append(PairRecord(sid, clean_rel, hazy_rel, float(beta), "", split[sid]))

    if records:
        for rec, label in zip(records, bin_by_intensity(scores, cfg.quantiles)):
            rec.bin = label.value
    manifest = out / "manifest.txt"
    lines = [MANIFEST_HEADER] + [r.line() for r in records] + [f"! {e}" for e in errors]
    manifest.write_text("\n".join(lines) + "\n")
    log.info("wrote %d pairs (%d errors) to %s", len(records), len(errors), manifest)
    return manifest


def resolve_manifest(path) -> Path:
    p = Path(path)
    if p.is_dir():
        return p / "manifest.txt"
    if not p.exists() and p.with_suffix(".txt").exists():
        return p.with_suffix(".txt")
    return p


def read_manifest(path) -> tuple[list[PairRecord], list[str]]:
    """Parse a manifest into pair records and error lines; paths stay relative."""
    records, errors = [], []
    for raw in resolve_manifest(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("!"):
            errors.append(line[1:].strip())
            continue
        f = [s.strip() for s in line.split(",")]
        if len(f) != 6:
            raise ParameterError(f"malformed manifest line: {raw!r}")
        records.append(PairRecord(f[0], f[1], f[2], float(f[3]), f[4], f[5]))
    return records, errors

