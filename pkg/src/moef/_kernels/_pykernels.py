"""Pure numpy implementations of the hot kernels.

These are the reference fallbacks used when the compiled extension is not
available. They must agree with ``_ckernels`` to 1e-12 (FFT) or bitwise
(Adagrad, AUC).
"""
import numpy as np


def bit_reverse_permutation(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def twiddles(n: int):
    k = np.arange(n // 2)
    angle = 2.0 * np.pi * k / n
    return np.cos(angle), -np.sin(angle)


def fft_modulus_rows(x: np.ndarray, n_fft: int) -> np.ndarray:
    """Magnitudes of the ``n_fft``-point DFT of each row, zero-padded on the right."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    rows, n = x.shape
    padded = np.zeros((rows, n_fft))
    padded[:, :n] = x
    perm = bit_reverse_permutation(n_fft)
    re = padded[:, perm]
    im = np.zeros_like(re)
    cos_t, sin_t = twiddles(n_fft)
    size = 2
    while size <= n_fft:
        half = size // 2
        step = n_fft // size
        wr = cos_t[: half * step : step]
        wi = sin_t[: half * step : step]
        re3 = re.reshape(rows, n_fft // size, size)
        im3 = im.reshape(rows, n_fft // size, size)
        br, bi = re3[..., half:], im3[..., half:]
        tr = wr * br - wi * bi
        ti = wr * bi + wi * br
        ar, ai = re3[..., :half].copy(), im3[..., :half].copy()
        re3[..., :half] = ar + tr
        im3[..., :half] = ai + ti
        re3[..., half:] = ar - tr
        im3[..., half:] = ai - ti
        size *= 2
    return np.hypot(re, im)


def adagrad_update(param: np.ndarray, grad: np.ndarray, accum: np.ndarray, lr: float, eps: float) -> None:
    """In place: ``accum += grad**2``; ``param -= lr * grad / (sqrt(accum) + eps)``."""
    accum += grad * grad
    param -= lr * grad / (np.sqrt(accum) + eps)


def auc_pair_counts(labels: np.ndarray, scores: np.ndarray):
    """Return ``(wins, ties, n_pos, n_neg)`` over all positive/negative pairs."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    _, group = np.unique(scores, return_inverse=True)
    pos = np.bincount(group, weights=(labels == 1).astype(np.int64)).astype(np.int64)
    neg = np.bincount(group, weights=(labels == 0).astype(np.int64)).astype(np.int64)
    neg_below = np.cumsum(neg) - neg
    wins = int(np.sum(pos * neg_below))
    ties = int(np.sum(pos * neg))
    return wins, ties, int(pos.sum()), int(neg.sum())
