"""Guided upsampling by an edge-aware per-pixel affine color transform.

For each channel we solve for ``a, b`` on the low-resolution grid minimizing

    sum_p (a_p I_p + b_p - O_p)^2
      + beta * sum_p sum_{q in N4(p)} w(I_p, I_q) ((a_p - a_q)^2 + (b_p - b_q)^2)
      + eps_ridge * sum_p ((a_p - 1)^2 + b_p^2)

with ``w = 1 / (||I_p - I_q|| + eps_w)`` over RGB. The ordered double sum
counts every edge twice. The fields are then bilinearly resized and applied
to the full-resolution input.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import cv2
import numpy as np
import scipy.sparse as sp

from .config import Solver, UpsampleConfig
from .errors import NonconvergenceError, ShapeError

log = logging.getLogger(__name__)

DENSE_FALLBACK_PIXELS = 64 * 64


@dataclass(frozen=True)
class TransformField:
    a: np.ndarray  # (H, W, C) scale
    b: np.ndarray  # (H, W, C) offset
    iterations: tuple[int, ...] = ()
    residuals: tuple[float, ...] = ()

    def __post_init__(self):
        if self.a.shape != self.b.shape:
            raise ShapeError(f"a {self.a.shape} and b {self.b.shape} disagree")

    @property
    def shape(self) -> tuple[int, int]:
        return self.a.shape[:2]


def neighbor_weight(c_p, c_q, eps_w: float = 0.01) -> np.ndarray:
    """Inverse color distance ``1 / (||c_p - c_q||_2 + eps_w)`` over the last axis."""
    d = np.linalg.norm(np.asarray(c_p, np.float64) - np.asarray(c_q, np.float64), axis=-1)
    return 1.0 / (d + eps_w)


def edge_weights(guide: np.ndarray, eps_w: float) -> tuple[np.ndarray, np.ndarray]:
    """Weights of horizontal ``(H, W-1)`` and vertical ``(H-1, W)`` edges."""
    g = np.asarray(guide, np.float64)
    return neighbor_weight(g[:, :-1], g[:, 1:], eps_w), neighbor_weight(g[:-1], g[1:], eps_w)


def _laplacian(guide: np.ndarray, cfg: UpsampleConfig) -> sp.csr_matrix:
    h, w = guide.shape[:2]
    n = h * w
    idx = np.arange(n).reshape(h, w)
    wh, wv = edge_weights(guide, cfg.eps_w)
    rows = np.concatenate([idx[:, :-1].ravel(), idx[:-1].ravel()])
    cols = np.concatenate([idx[:, 1:].ravel(), idx[1:].ravel()])
    # each unordered edge appears twice in the ordered neighbor sum
    vals = 2.0 * cfg.beta * np.concatenate([wh.ravel(), wv.ravel()])
    adj = sp.coo_matrix((vals, (rows, cols)), shape=(n, n))
    adj = (adj + adj.T).tocsr()
    return (sp.diags(np.asarray(adj.sum(axis=1)).ravel()) - adj).tocsr()


def build_system(guide: np.ndarray, target: np.ndarray, cfg: UpsampleConfig) -> list[tuple[sp.csr_matrix, np.ndarray]]:
    """Normal equations ``A x = r`` per channel, ``x = [a.ravel(), b.ravel()]``."""
    h, w, c = guide.shape
    n = h * w
    lap = _laplacian(guide, cfg)
    eye = sp.identity(n, format="csr")
    systems = []
    for ch in range(c):
        i = np.asarray(guide[..., ch], np.float64).ravel()
        o = np.asarray(target[..., ch], np.float64).ravel()
        di = sp.diags(i)
        A = sp.bmat(
            [[sp.diags(i * i) + lap + cfg.eps_ridge * eye, di],
             [di, (1.0 + cfg.eps_ridge) * eye + lap]],
            format="csr",
        )
        rhs = np.concatenate([i * o + cfg.eps_ridge, o])
        systems.append((A, rhs))
    return systems


def pcg(A: sp.csr_matrix, rhs: np.ndarray, tol: float, max_iters: int, x0: np.ndarray | None = None):
    """Jacobi-preconditioned conjugate gradient.

    Stops when ``||rhs - A x|| <= tol * ||rhs||``. Returns ``(x, iters, rel_residual)``.
    """
    inv_diag = 1.0 / A.diagonal()
    x = np.zeros_like(rhs) if x0 is None else x0.astype(np.float64).copy()
    r = rhs - A @ x
    norm_rhs = np.linalg.norm(rhs) or 1.0
    rel = np.linalg.norm(r) / norm_rhs
    if rel <= tol:
        return x, 0, rel
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    for k in range(1, max_iters + 1):
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        rel = np.linalg.norm(r) / norm_rhs
        if rel <= tol:
            # recompute from scratch to make the reported residual honest
            rel = np.linalg.norm(rhs - A @ x) / norm_rhs
            if rel <= tol:
                return x, k, rel
            r = rhs - A @ x
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, max_iters, rel


def solve_transform(I_low: np.ndarray, O_low: np.ndarray, config: UpsampleConfig | None = None) -> TransformField:
    """Per-channel least-squares fit of ``O ~ a * I + b`` with edge-aware smoothing."""
    cfg = config or UpsampleConfig()
    I_low = np.asarray(I_low, np.float64)
    O_low = np.asarray(O_low, np.float64)
    if I_low.shape != O_low.shape or I_low.ndim != 3:
        raise ShapeError(f"input {I_low.shape} and guide {O_low.shape} must be matching (H, W, C)")
    h, w, c = I_low.shape
    n = h * w
    a = np.empty((h, w, c))
    b = np.empty((h, w, c))
    iters, residuals = [], []
    for ch, (A, rhs) in enumerate(build_system(I_low, O_low, cfg)):
        x0 = np.concatenate([np.ones(n), np.zeros(n)])
        if cfg.solver is Solver.DENSE:
            x = np.linalg.solve(A.toarray(), rhs)
            k, rel = 0, np.linalg.norm(rhs - A @ x) / (np.linalg.norm(rhs) or 1.0)
        else:
            x, k, rel = pcg(A, rhs, cfg.cg_tol, cfg.cg_max_iters, x0)
            if rel > cfg.cg_tol:
                if n > DENSE_FALLBACK_PIXELS:
                    raise NonconvergenceError(
                        f"CG stopped at relative residual {rel:.2e} after {k} iterations (channel {ch})"
                    )
                log.info("CG did not converge on channel %d; dense fallback", ch)
                x = np.linalg.solve(A.toarray(), rhs)
                rel = np.linalg.norm(rhs - A @ x) / (np.linalg.norm(rhs) or 1.0)
        a[..., ch] = x[:n].reshape(h, w)
        b[..., ch] = x[n:].reshape(h, w)
        iters.append(k)
        residuals.append(float(rel))
    return TransformField(a, b, tuple(iters), tuple(residuals))


def energy(I_low: np.ndarray, O_low: np.ndarray, a: np.ndarray, b: np.ndarray,
           config: UpsampleConfig | None = None) -> np.ndarray:
    """The minimized energy per channel, evaluated term by term."""
    cfg = config or UpsampleConfig()
    I_low = np.asarray(I_low, np.float64)
    data = ((a * I_low + b - O_low) ** 2).sum(axis=(0, 1))
    wh, wv = edge_weights(I_low, cfg.eps_w)
    smooth = np.zeros(I_low.shape[-1])
    for f in (a, b):
        dh = (f[:, 1:] - f[:, :-1]) ** 2
        dv = (f[1:] - f[:-1]) ** 2
        smooth += 2.0 * ((wh[..., None] * dh).sum(axis=(0, 1)) + (wv[..., None] * dv).sum(axis=(0, 1)))
    ridge = ((a - 1.0) ** 2 + b ** 2).sum(axis=(0, 1))
    return data + cfg.beta * smooth + cfg.eps_ridge * ridge


def resize_bilinear(field: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    h, w = size
    if field.shape[:2] == (h, w):
        return np.asarray(field, np.float64)
    return cv2.resize(np.asarray(field, np.float64), (w, h), interpolation=cv2.INTER_LINEAR)


def downsample_area(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Area-average ``img`` onto an ``(H, W)`` grid."""
    h, w = size
    if img.shape[:2] == (h, w):
        return np.asarray(img, np.float64)
    if img.shape[0] < h or img.shape[1] < w:
        raise ShapeError(f"cannot area-downsample {img.shape[:2]} to larger {size}")
    return cv2.resize(np.asarray(img, np.float64), (w, h), interpolation=cv2.INTER_AREA)


def apply_transform(I_full: np.ndarray, field: TransformField, clamp: bool = True) -> np.ndarray:
    """``a * I + b`` with ``(a, b)`` bilinearly resized to ``I_full``'s grid."""
    I_full = np.asarray(I_full, np.float64)
    size = I_full.shape[:2]
    out = resize_bilinear(field.a, size) * I_full + resize_bilinear(field.b, size)
    return np.clip(out, -1.0, 1.0) if clamp else out


def guided_upsample(I_full: np.ndarray, O_low: np.ndarray, config: UpsampleConfig | None = None,
                    return_field: bool = False):
    """Transfer the low-resolution recoloring ``O_low`` onto ``I_full``."""
    O_low = np.asarray(O_low, np.float64)
    I_low = downsample_area(np.asarray(I_full), O_low.shape[:2])
    field = solve_transform(I_low, O_low, config)
    out = apply_transform(I_full, field)
    return (out, field) if return_field else out
