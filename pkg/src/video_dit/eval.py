"""Quantitative metrics: SSIM, PSNR, a Gaussian Frechet distance over
pluggable features, and the collision-probe readout.

SSIM is the single-scale original: 11x11 Gaussian window sigma=1.5,
K1=0.01, K2=0.03, dynamic range 1.0, computed per frame and channel on
valid windows and averaged.  The Frechet distance runs over a toy
feature map (4x4-average-pooled frames, flattened over time), so its
absolute values are reported as `fd_toy` and are not comparable to
published feature-network distances.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import convolve2d

PSNR_CAP = 99.0

_SSIM_K1 = 0.01
_SSIM_K2 = 0.03
_SSIM_WIN = 11
_SSIM_SIGMA = 1.5


def _gaussian_window(size=_SSIM_WIN, sigma=_SSIM_SIGMA):
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


_WINDOW = _gaussian_window()


def _ssim_plane(a, b):
    c1 = _SSIM_K1 ** 2
    c2 = _SSIM_K2 ** 2
    win = _WINDOW
    mu_a = convolve2d(a, win, mode="valid")
    mu_b = convolve2d(b, win, mode="valid")
    aa = convolve2d(a * a, win, mode="valid") - mu_a * mu_a
    bb = convolve2d(b * b, win, mode="valid") - mu_b * mu_b
    ab = convolve2d(a * b, win, mode="valid") - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * ab + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (aa + bb + c2)
    return float(np.mean(num / den))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM between two pixel clips (F, H, W, C) with range [0, 1]."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.shape[1] < _SSIM_WIN or a.shape[2] < _SSIM_WIN:
        raise ValueError(f"frames smaller than the {_SSIM_WIN}x{_SSIM_WIN} window")
    vals = [_ssim_plane(a[f, :, :, ch], b[f, :, :, ch])
            for f in range(a.shape[0]) for ch in range(a.shape[3])]
    return float(np.mean(vals))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1 / MSE) for range-[0,1] clips; identical inputs return
    the documented cap (99 dB)."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return float(min(10.0 * np.log10(1.0 / mse), PSNR_CAP))


def _sqrtm_psd(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((m + m.T) / 2.0)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(feats_a: np.ndarray, feats_b: np.ndarray) -> float:
    """Gaussian Frechet distance between two feature samples (N, D).

    |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}), with the cross
    square root computed as sqrtm(sqrtm(S_a) S_b sqrtm(S_a)) by
    eigendecomposition, negative eigenvalues clamped to zero.
    """
    feats_a = np.asarray(feats_a, dtype=np.float64)
    feats_b = np.asarray(feats_b, dtype=np.float64)
    if feats_a.ndim != 2 or feats_b.ndim != 2:
        raise ValueError("feature sets must be 2-d (samples, dim)")
    if feats_a.shape[1] != feats_b.shape[1]:
        raise ValueError(f"feature dims differ: {feats_a.shape[1]} vs "
                         f"{feats_b.shape[1]}")
    if feats_a.shape[0] < 2 or feats_b.shape[0] < 2:
        raise ValueError("need at least 2 samples per side")
    mu_a = feats_a.mean(axis=0)
    mu_b = feats_b.mean(axis=0)
    cov_a = np.cov(feats_a, rowvar=False)
    cov_b = np.cov(feats_b, rowvar=False)
    cov_a = np.atleast_2d(cov_a)
    cov_b = np.atleast_2d(cov_b)
    a_half = _sqrtm_psd(cov_a)
    cross = _sqrtm_psd(a_half @ cov_b @ a_half)
    d2 = float(((mu_a - mu_b) ** 2).sum()
               + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(cross))
    return max(d2, 0.0)


def pool_frames(clip: np.ndarray, grid: int = 4) -> np.ndarray:
    """Average-pool each frame to a (grid, grid) map, keeping channels."""
    f, h, w, c = clip.shape
    if h % grid or w % grid:
        raise ValueError(f"frame dims ({h},{w}) not divisible by grid {grid}")
    return clip.reshape(f, grid, h // grid, grid, w // grid, c).mean(axis=(2, 4))


def clip_features(clip: np.ndarray, grid: int = 4) -> np.ndarray:
    """Default Frechet feature map: pooled frames flattened over time."""
    return pool_frames(clip, grid).ravel()


# ---------------------------------------------------------------------------
# metric report

@dataclass
class MetricReport:
    per_clip: list = field(default_factory=list)  # dicts with ssim/psnr
    ssim_mean: float = 0.0
    psnr_mean: float = 0.0
    fd_toy: float | None = None
    probe_accuracy: float | None = None

    def to_json(self) -> str:
        return json.dumps({
            "ssim_mean": self.ssim_mean,
            "psnr_mean": self.psnr_mean,
            "fd_toy": self.fd_toy,
            "probe_accuracy": self.probe_accuracy,
            "per_clip": self.per_clip,
        }, indent=2)

    def format_table(self) -> str:
        lines = [f"{'clip':>6}  {'ssim':>8}  {'psnr':>8}"]
        for i, row in enumerate(self.per_clip):
            lines.append(f"{i:>6}  {row['ssim']:>8.4f}  {row['psnr']:>8.2f}")
        lines.append(f"{'mean':>6}  {self.ssim_mean:>8.4f}  {self.psnr_mean:>8.2f}")
        if self.fd_toy is not None:
            lines.append(f"fd_toy  {self.fd_toy:.4f}")
        if self.probe_accuracy is not None:
            lines.append(f"probe_accuracy  {self.probe_accuracy:.4f}")
        return "\n".join(lines)


def evaluate_clips(pred_clips, true_clips, with_fd: bool = True) -> MetricReport:
    """Per-clip SSIM/PSNR plus an aggregate toy Frechet distance."""
    if len(pred_clips) != len(true_clips):
        raise ValueError("prediction/truth counts differ")
    report = MetricReport()
    for p, t in zip(pred_clips, true_clips):
        report.per_clip.append({"ssim": ssim(p, t), "psnr": psnr(p, t)})
    report.ssim_mean = float(np.mean([r["ssim"] for r in report.per_clip]))
    report.psnr_mean = float(np.mean([r["psnr"] for r in report.per_clip]))
    if with_fd and len(pred_clips) >= 2:
        fa = np.stack([clip_features(c) for c in pred_clips])
        fb = np.stack([clip_features(c) for c in true_clips])
        report.fd_toy = frechet_distance(fa, fb)
    return report


# ---------------------------------------------------------------------------
# collision probe (physics readout)

def _probe_features(observed, predicted, downsample):
    """Per-clip feature vector from the observed and future segments."""
    feats = []
    for obs, pred in zip(observed, predicted):
        both = np.concatenate([obs, pred], axis=0)
        feats.append(clip_features(both, grid=both.shape[1] // downsample))
    return np.stack(feats)


def collision_probe(observed, predicted, labels, *, seed: int = 0,
                    hidden: int = 32, epochs: int = 400, lr: float = 3e-3,
                    downsample: int = 2, test_frac: float = 0.5,
                    shuffle_labels: bool = False) -> dict:
    """Train a 2-layer perceptron on (observed + predicted) frames to read
    out whether the two balls collide; report held-out accuracy.

    `predicted` may be model output or the ground-truth future (the
    upper-bound run).  shuffle_labels permutes labels for the chance-level
    control.
    """
    labels = np.asarray(labels, dtype=np.float64)
    if labels.ndim != 1 or len(labels) != len(observed):
        raise ValueError("labels must be one boolean per clip")
    x = _probe_features(observed, predicted, downsample)
    rng = np.random.default_rng(seed)
    y = labels.copy()
    if shuffle_labels:
        y = y[rng.permutation(len(y))]

    order = rng.permutation(len(y))
    n_test = max(int(len(y) * test_frac), 1)
    test_idx, train_idx = order[:n_test], order[n_test:]
    mu = x[train_idx].mean(axis=0)
    sd = x[train_idx].std(axis=0) + 1e-8
    xs = (x - mu) / sd

    d = xs.shape[1]
    w1 = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, hidden))
    b1 = np.zeros(hidden)
    w2 = rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(hidden, 1))
    b2 = np.zeros(1)
    m = {k: 0.0 for k in ("w1", "b1", "w2", "b2")}
    v = {k: 0.0 for k in ("w1", "b1", "w2", "b2")}

    xtr, ytr = xs[train_idx], y[train_idx]
    for step in range(1, epochs + 1):
        h = np.tanh(xtr @ w1 + b1)
        logit = (h @ w2 + b2)[:, 0]
        p = 1.0 / (1.0 + np.exp(-logit))
        dlogit = (p - ytr) / len(ytr)
        gw2 = h.T @ dlogit[:, None]
        gb2 = np.array([dlogit.sum()])
        dh = dlogit[:, None] @ w2.T * (1.0 - h * h)
        gw1 = xtr.T @ dh
        gb1 = dh.sum(axis=0)
        for key, g in (("w1", gw1), ("b1", gb1), ("w2", gw2), ("b2", gb2)):
            m[key] = 0.9 * m[key] + 0.1 * g
            v[key] = 0.999 * v[key] + 0.001 * g * g
            mh = m[key] / (1 - 0.9 ** step)
            vh = v[key] / (1 - 0.999 ** step)
            if key == "w1":
                w1 -= lr * mh / (np.sqrt(vh) + 1e-8)
            elif key == "b1":
                b1 -= lr * mh / (np.sqrt(vh) + 1e-8)
            elif key == "w2":
                w2 -= lr * mh / (np.sqrt(vh) + 1e-8)
            else:
                b2 -= lr * mh / (np.sqrt(vh) + 1e-8)

    def acc(idx):
        h = np.tanh(xs[idx] @ w1 + b1)
        pred = (h @ w2 + b2)[:, 0] > 0.0
        return float(np.mean(pred == (y[idx] > 0.5)))

    return {"accuracy": acc(test_idx), "train_accuracy": acc(train_idx),
            "n_test": int(n_test)}
