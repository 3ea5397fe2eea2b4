"""PSNR, SSIM and the Charbonnier training objective."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from . import numcore as nc
from .errors import ParameterError, ShapeError
from .numcore import Tensor, as_tensor

PSNR_CAP = 100.0
CHARBONNIER_EPS = 1e-3


def _arr(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _congruent(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ")


def charbonnier(clean, restored, eps: float = CHARBONNIER_EPS) -> Tensor:
    """Mean over elements of sqrt(d^2 + eps^2), d = clean - restored.

    Evaluated as ``eps + mean(d^2 / (sqrt(d^2 + eps^2) + eps))`` so that
    identical inputs give exactly `eps`.
    """
    if eps <= 0:
        raise ParameterError(f"charbonnier eps must be > 0, got {eps}")
    clean, restored = as_tensor(clean), as_tensor(restored)
    _congruent(clean.data, restored.data, "charbonnier")
    d = nc.sub(clean, restored)
    sq = d * d
    excess = nc.div(sq, nc.sqrt(sq + eps * eps) + eps)
    return nc.mean(excess) + eps


def psnr(a, b, peak: float = 1.0) -> float:
    a, b = _arr(a).astype(np.float64), _arr(b).astype(np.float64)
    _congruent(a, b, "psnr")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(peak * peak / mse))


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2
    w = np.exp(-(r * r) / (2 * sigma * sigma))
    return w / w.sum()


def _luma(x: np.ndarray) -> np.ndarray:
    # (H, W), (C, H, W) or (1, C, H, W) -> (H, W) by channel mean
    if x.ndim == 4:
        if x.shape[0] != 1:
            raise ShapeError("ssim compares single images; got a batch")
        x = x[0]
    if x.ndim == 3:
        x = x.mean(axis=0)
    if x.ndim != 2:
        raise ShapeError(f"ssim: unsupported image shape {x.shape}")
    return x


def ssim(a, b, window: int = 11, sigma: float = 1.5, peak: float = 1.0, luma: bool = True) -> float:
    """Gaussian-windowed SSIM averaged over valid (fully covered) positions.

    With ``luma=False`` a (C, H, W) pair is scored per channel and averaged.
    """
    a, b = _arr(a).astype(np.float64), _arr(b).astype(np.float64)
    _congruent(a, b, "ssim")
    if not luma:
        chans = a[0] if a.ndim == 4 else a
        chans_b = b[0] if b.ndim == 4 else b
        return float(np.mean([ssim(x, y, window, sigma, peak) for x, y in zip(chans, chans_b)]))
    a, b = _luma(a), _luma(b)
    if min(a.shape) < window:
        raise ParameterError(f"ssim: image {a.shape} smaller than window {window}")
    w = gaussian_window(window, sigma)

    def blur(x):
        x = correlate1d(x, w, axis=0, mode="constant")
        x = correlate1d(x, w, axis=1, mode="constant")
        r = window // 2
        return x[r:x.shape[0] - r, r:x.shape[1] - r]

    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    mu_a, mu_b = blur(a), blur(b)
    s_aa = blur(a * a) - mu_a * mu_a
    s_bb = blur(b * b) - mu_b * mu_b
    s_ab = blur(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * s_ab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (s_aa + s_bb + c2)
    return float(np.mean(num / den))


@dataclass
class MetricReport:
    image_ids: list[str] = field(default_factory=list)
    psnr: list[float] = field(default_factory=list)
    ssim: list[float] = field(default_factory=list)
    charbonnier: list[float] = field(default_factory=list)

    def add(self, image_id: str, restored, clean) -> None:
        r, c = _arr(restored), _arr(clean)
        self.image_ids.append(image_id)
        self.psnr.append(psnr(r, c))
        self.ssim.append(ssim(r, c))
        with nc.no_record():
            self.charbonnier.append(charbonnier(c.astype(np.float64), r.astype(np.float64)).data.item())

    def __len__(self) -> int:
        return len(self.image_ids)

    def means(self) -> dict[str, float]:
        return {k: float(np.mean(getattr(self, k))) if self.image_ids else float("nan")
                for k in ("psnr", "ssim", "charbonnier")}

    def write(self, path, baseline: "MetricReport | None" = None) -> None:
        """One ``image_id, psnr, ssim, charbonnier`` row per image plus summary rows."""
        lines = ["# image_id, psnr, ssim, charbonnier"]
        for row in zip(self.image_ids, self.psnr, self.ssim, self.charbonnier):
            lines.append(f"{row[0]}, {row[1]:.6f}, {row[2]:.6f}, {row[3]:.8f}")
        m = self.means()
        lines.append(f"#mean, {m['psnr']:.6f}, {m['ssim']:.6f}, {m['charbonnier']:.8f}")
        if baseline is not None:
            b = baseline.means()
            lines.append(f"#hazy_mean, {b['psnr']:.6f}, {b['ssim']:.6f}, {b['charbonnier']:.8f}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def read(cls, path) -> "MetricReport":
        rep = cls()
        for line in Path(path).read_text().splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            name, p, s, ch = (f.strip() for f in line.split(","))
            rep.image_ids.append(name)
            rep.psnr.append(float(p))
            rep.ssim.append(float(s))
            rep.charbonnier.append(float(ch))
        return rep
