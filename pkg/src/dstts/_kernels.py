"""Hot numeric loops with a numba path and a pure-numpy fallback.

The backend is picked once at import time.  Set ``DSTTS_NUMBA=0`` to force the
numpy implementations (also used automatically when numba is missing).  Both
paths are kept importable as ``numba_impl`` / ``numpy_impl`` so they can be
compared and benchmarked side by side.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None


def _flag_enabled() -> bool:
    return os.environ.get("DSTTS_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")


# --------------------------------------------------------------------------
# numpy reference implementations
# --------------------------------------------------------------------------

def _np_sinc_resample(x, ratio, n_out, half_width, cutoff):
    # ratio = out_rate / in_rate; output sample j sits at input time j / ratio
    t = np.arange(n_out, dtype=np.float64) / ratio
    center = np.floor(t).astype(np.int64)
    offsets = np.arange(-half_width + 1, half_width + 1)
    idx = center[:, None] + offsets[None, :]
    dist = t[:, None] - idx
    arg = dist * cutoff
    win = 0.5 + 0.5 * np.cos(np.pi * np.clip(dist / half_width, -1.0, 1.0))
    w = cutoff * np.sinc(arg) * win
    valid = (idx >= 0) & (idx < x.shape[0])
    vals = np.where(valid, x[np.clip(idx, 0, x.shape[0] - 1)], 0.0)
    return np.sum(w * vals, axis=1)


def _np_autocorr_frames(frames, min_lag, max_lag):
    n_frames, win = frames.shape
    out = np.zeros((n_frames, max_lag - min_lag + 1))
    energy_cum = np.concatenate(
        [np.zeros((n_frames, 1)), np.cumsum(frames * frames, axis=1)], axis=1
    )
    for j, lag in enumerate(range(min_lag, max_lag + 1)):
        n = win - lag
        num = np.sum(frames[:, :n] * frames[:, lag:], axis=1)
        e0 = energy_cum[:, n]
        e1 = energy_cum[:, win] - energy_cum[:, lag]
        den = np.sqrt(e0 * e1)
        out[:, j] = np.where(den > 1e-12, num / np.where(den > 1e-12, den, 1.0), 0.0)
    return out


def _np_overlap_add(frames, window, hop, n_samples):
    n_frames, win = frames.shape
    out = np.zeros(n_samples)
    wsum = np.zeros(n_samples)
    w2 = window * window
    for i in range(n_frames):
        s = i * hop
        out[s:s + win] += window * frames[i]
        wsum[s:s + win] += w2
    return out, wsum


def _np_scatter_add_rows(src, index, n_rows):
    out = np.zeros((n_rows,) + src.shape[1:], dtype=src.dtype)
    np.add.at(out, index, src)
    return out


def _np_col2im(cols, length, kernel, channels):
    # cols: (L, K*C) gradient of the im2col matrix built from an input padded by K//2
    pad = kernel // 2
    c = cols.reshape(length, kernel, channels)
    out = np.zeros((length + 2 * pad, channels), dtype=cols.dtype)
    for k in range(kernel):
        out[k:k + length] += c[:, k, :]
    return out[pad:pad + length]


numpy_impl = SimpleNamespace(
    sinc_resample=_np_sinc_resample,
    autocorr_frames=_np_autocorr_frames,
    overlap_add=_np_overlap_add,
    scatter_add_rows=_np_scatter_add_rows,
    col2im=_np_col2im,
    name="numpy",
)


# --------------------------------------------------------------------------
# numba implementations
# --------------------------------------------------------------------------

def _build_numba():
    njit = numba.njit(cache=True, fastmath=False)

    @njit
    def sinc_resample(x, ratio, n_out, half_width, cutoff):
        out = np.zeros(n_out)
        n_in = x.shape[0]
        for j in range(n_out):
            t = j / ratio
            c = int(np.floor(t))
            acc = 0.0
            for o in range(-half_width + 1, half_width + 1):
                i = c + o
                if i < 0 or i >= n_in:
                    continue
                d = t - i
                a = d * cutoff
                if a == 0.0:
                    s = 1.0
                else:
                    s = np.sin(np.pi * a) / (np.pi * a)
                r = d / half_width
                if r > 1.0:
                    r = 1.0
                elif r < -1.0:
                    r = -1.0
                acc += cutoff * s * (0.5 + 0.5 * np.cos(np.pi * r)) * x[i]
            out[j] = acc
        return out

    @njit
    def autocorr_frames(frames, min_lag, max_lag):
        n_frames, win = frames.shape
        out = np.zeros((n_frames, max_lag - min_lag + 1))
        for f in range(n_frames):
            cum = np.zeros(win + 1)
            for t in range(win):
                cum[t + 1] = cum[t] + frames[f, t] * frames[f, t]
            for lag in range(min_lag, max_lag + 1):
                n = win - lag
                num = 0.0
                for t in range(n):
                    num += frames[f, t] * frames[f, t + lag]
                den = np.sqrt(cum[n] * (cum[win] - cum[lag]))
                if den > 1e-12:
                    out[f, lag - min_lag] = num / den
        return out

    @njit
    def overlap_add(frames, window, hop, n_samples):
        n_frames, win = frames.shape
        out = np.zeros(n_samples)
        wsum = np.zeros(n_samples)
        for i in range(n_frames):
            s = i * hop
            for t in range(win):
                out[s + t] += window[t] * frames[i, t]
                wsum[s + t] += window[t] * window[t]
        return out, wsum

    @njit
    def _scatter_2d(src, index, out):
        for r in range(index.shape[0]):
            dst = index[r]
            for c in range(src.shape[1]):
                out[dst, c] += src[r, c]
        return out

    def scatter_add_rows(src, index, n_rows):
        out = np.zeros((n_rows,) + src.shape[1:], dtype=src.dtype)
        if src.ndim != 2:
            np.add.at(out, index, src)
            return out
        return _scatter_2d(np.ascontiguousarray(src), np.asarray(index, dtype=np.int64), out)

    @njit
    def _col2im(cols, length, kernel, channels, out):
        for t in range(length):
            for k in range(kernel):
                dst = t + k
                base = k * channels
                for c in range(channels):
                    out[dst, c] += cols[t, base + c]
        return out

    def col2im(cols, length, kernel, channels):
        pad = kernel // 2
        out = np.zeros((length + 2 * pad, channels), dtype=cols.dtype)
        _col2im(np.ascontiguousarray(cols), length, kernel, channels, out)
        return out[pad:pad + length]

    return SimpleNamespace(
        sinc_resample=sinc_resample,
        autocorr_frames=autocorr_frames,
        overlap_add=overlap_add,
        scatter_add_rows=scatter_add_rows,
        col2im=col2im,
        name="numba",
    )


numba_impl = _build_numba() if numba is not None else None

USE_NUMBA = numba_impl is not None and _flag_enabled()
active = numba_impl if USE_NUMBA else numpy_impl


def sinc_resample(x: np.ndarray, ratio: float, n_out: int, half_width: int, cutoff: float) -> np.ndarray:
    return active.sinc_resample(np.ascontiguousarray(x, dtype=np.float64), float(ratio),
                                int(n_out), int(half_width), float(cutoff))


def autocorr_frames(frames: np.ndarray, min_lag: int, max_lag: int) -> np.ndarray:
    return active.autocorr_frames(np.ascontiguousarray(frames, dtype=np.float64),
                                  int(min_lag), int(max_lag))


def overlap_add(frames: np.ndarray, window: np.ndarray, hop: int, n_samples: int):
    return active.overlap_add(np.ascontiguousarray(frames, dtype=np.float64),
                              np.ascontiguousarray(window, dtype=np.float64), int(hop), int(n_samples))


def scatter_add_rows(src: np.ndarray, index: np.ndarray, n_rows: int) -> np.ndarray:
    return active.scatter_add_rows(src, np.asarray(index, dtype=np.int64), int(n_rows))


def col2im(cols: np.ndarray, length: int, kernel: int, channels: int) -> np.ndarray:
    return active.col2im(cols, int(length), int(kernel), int(channels))
