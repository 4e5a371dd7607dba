"""Fused subset-rate kernel: the hot inner loop of every selection solver.

Evaluating one candidate user subset means: gather the selected rows,
build the conjugate-phase analog precoder, zero-force the effective
channel, normalize per-stream power and accumulate log2(1 + SINR).
Exhaustive search calls this for every combination on every channel
realization, so the straight-line implementation below is compiled with
numba when available.  ``MMWSEL_NO_NUMBA=1`` (or numba being absent)
selects the pure-numpy twin; both lanes share the same source, so they
agree to floating-point noise.  ``benchmarks/bench_selection.py`` times
the two lanes against each other.
"""

import os

import numpy as np

_ZF_RCOND = 1e-12


def _subset_rate_impl(h, idx, noise_power):
    """Sum rate of the subset ``idx`` of rows of ``h``.

    Returns (sum_rate, sinr, rank_deficient).  Straight-line math only,
    kept numba-compilable: no dataclasses, no fancy indexing.
    """
    n_tx = h.shape[1]
    k = idx.shape[0]
    inv_sqrt_nt = 1.0 / np.sqrt(n_tx)

    b = np.empty((k, n_tx), dtype=np.complex128)
    for i in range(k):
        b[i, :] = h[idx[i], :]

    # Analog stage: column u matches the conjugate phases of user u's row.
    f_rf = np.empty((n_tx, k), dtype=np.complex128)
    for i in range(k):
        for j in range(n_tx):
            mag = np.abs(b[i, j])
            if mag > 0.0:
                f_rf[j, i] = (np.conj(b[i, j]) / mag) * inv_sqrt_nt
            else:
                f_rf[j, i] = inv_sqrt_nt

    # Baseband stage: SVD pseudo-inverse of the k x k effective channel.
    h_eff = b @ f_rf
    u, s, vh = np.linalg.svd(h_eff)
    cutoff = _ZF_RCOND * s[0]
    rank_deficient = False
    s_inv = np.zeros(k)
    for i in range(k):
        if s[i] > cutoff and s[i] > 0.0:
            s_inv[i] = 1.0 / s[i]
        else:
            rank_deficient = True
    f_bb = (vh.conj().T * s_inv) @ u.conj().T

    # Per-stream power normalization: ||F_RF @ f_bb[:, u]|| = 1.
    fwd = f_rf @ f_bb
    for j in range(k):
        nrm = np.sqrt(np.sum(np.abs(fwd[:, j]) ** 2))
        if nrm > 0.0:
            fwd[:, j] = fwd[:, j] / nrm

    g = b @ fwd
    sinr = np.empty(k)
    for i in range(k):
        signal = np.abs(g[i, i]) ** 2
        interference = 0.0
        for j in range(k):
            if j != i:
                interference += np.abs(g[i, j]) ** 2
        sinr[i] = signal / (interference + noise_power)

    rate = 0.0
    for i in range(k):
        rate += np.log2(1.0 + sinr[i])
    return rate, sinr, rank_deficient


def _scan_best_impl(h, combos, noise_power):
    """Index and rate of the best row of ``combos`` (ties: first/lowest label)."""
    best_i = 0
    best_rate = -1.0
    for i in range(combos.shape[0]):
        rate, _, _ = _subset_rate_impl(h, combos[i], noise_power)
        if rate > best_rate:
            best_rate = rate
            best_i = i
    return best_i, best_rate


# Pure-numpy lane, always importable.
subset_rate_numpy = _subset_rate_impl
scan_best_numpy = _scan_best_impl

_disabled = os.environ.get("MMWSEL_NO_NUMBA", "").strip() not in ("", "0")
USING_NUMBA = False
if not _disabled:
    try:
        from numba import njit

        subset_rate_jit = njit(cache=True)(_subset_rate_impl)

        @njit(cache=True)
        def scan_best_jit(h, combos, noise_power):
            best_i = 0
            best_rate = -1.0
            for i in range(combos.shape[0]):
                rate, _, _ = subset_rate_jit(h, combos[i], noise_power)
                if rate > best_rate:
                    best_rate = rate
                    best_i = i
            return best_i, best_rate

        USING_NUMBA = True
    except ImportError:
        pass

if USING_NUMBA:
    BACKEND = "numba"
    _subset_rate = subset_rate_jit
    _scan_best = scan_best_jit
else:
    BACKEND = "numpy"
    _subset_rate = subset_rate_numpy
    _scan_best = scan_best_numpy


def subset_rate(h: np.ndarray, idx: np.ndarray, noise_power: float):
    """Dispatching wrapper: (sum_rate, sinr, rank_deficient) for one subset."""
    return _subset_rate(np.ascontiguousarray(h, dtype=np.complex128),
                        np.asarray(idx, dtype=np.int64),
                        float(noise_power))


def scan_best(h: np.ndarray, combos: np.ndarray, noise_power: float):
    """Best row of a (W, k) combination table; returns (row_index, rate)."""
    return _scan_best(np.ascontiguousarray(h, dtype=np.complex128),
                      np.ascontiguousarray(combos, dtype=np.int64),
                      float(noise_power))
