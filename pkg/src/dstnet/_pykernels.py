"""Numpy fallbacks for the compiled metric kernels.

Same signatures and results as ``_ckernels``; used when the extension is
missing or ``DSTNET_PURE_PYTHON`` is set.
"""
import numpy as np

_CHUNK = 512


def loe_flip_count(enh, orig):
    enh = np.ascontiguousarray(enh, dtype=np.float64)
    orig = np.ascontiguousarray(orig, dtype=np.float64)
    if enh.shape != orig.shape:
        raise ValueError("lightness vectors differ in length")
    total = 0
    for start in range(0, enh.shape[0], _CHUNK):
        e = enh[start:start + _CHUNK, None] >= enh[None, :]
        o = orig[start:start + _CHUNK, None] >= orig[None, :]
        total += int(np.count_nonzero(e != o))
    return total


def eme_tiles(gray, block, eps):
    gray = np.asarray(gray, dtype=np.float64)
    h, w = gray.shape
    bh, bw = min(block, h), min(block, w)
    th, tw = h // bh, w // bw
    tiles = gray[: th * bh, : tw * bw].reshape(th, bh, tw, bw)
    hi = tiles.max(axis=(1, 3))
    lo = tiles.min(axis=(1, 3))
    return 20.0 * np.log10((hi + eps) / (lo + eps))
