"""Per-user SINR, sum rate and the analytic operation-count model.

SINR uses magnitude-squared interference powers; the sum rate is the
spectral efficiency sum_k log2(1 + sinr_k) in bits/s/Hz.  Operation
counts charge O(n_tx^2 * n_select^2) complex operations per evaluated
subset for the classical solvers and a layer-by-layer multiply count for
the CNN's online inference.
"""

from dataclasses import dataclass
from math import comb

import numpy as np

from .cnn import NetworkConfig, multiply_count
from .precoding import PrecoderPair, hybrid_precoders


@dataclass
class RateReport:
    """Outcome of evaluating one user subset."""

    sinr: np.ndarray
    sum_rate: float
    noise_power: float
    rank_deficient: bool = False


def sinr_per_user(b: np.ndarray, pair: PrecoderPair, noise_power: float) -> np.ndarray:
    """SINR of each selected user under the given precoder pair."""
    if noise_power <= 0.0:
        raise ValueError("noise power must be positive")
    gains = np.abs(b @ pair.f_rf @ pair.f_bb) ** 2
    signal = np.diag(gains)
    interference = gains.sum(axis=1) - signal
    return signal / (interference + noise_power)


def sum_rate(sinr: np.ndarray) -> float:
    """Spectral efficiency sum_k log2(1 + sinr_k)."""
    sinr = np.asarray(sinr, dtype=float)
    if np.any(sinr < 0.0):
        raise ValueError("SINR values must be nonnegative")
    return float(np.sum(np.log2(1.0 + sinr)))


def evaluate_selection(h: np.ndarray, subset, noise_power: float) -> RateReport:
    """Build B from the selected rows, precode and rate the subset."""
    idx = np.asarray(subset, dtype=np.int64)
    if idx.ndim != 1 or len(np.unique(idx)) != idx.size:
        raise ValueError("subset must be a 1-D list of distinct user indices")
    if idx.size > h.shape[0] or np.any(idx < 0) or np.any(idx >= h.shape[0]):
        raise ValueError("subset indices out of range")
    b = h[idx]
    pair = hybrid_precoders(b)
    sinr = sinr_per_user(b, pair, noise_power)
    return RateReport(sinr=sinr, sum_rate=sum_rate(sinr),
                      noise_power=float(noise_power),
                      rank_deficient=pair.rank_deficient)


@dataclass
class OpCountModel:
    """Dimensions feeding the closed-form complexity comparison."""

    n_tx: int
    n_users: int
    n_select: int
    bpso_pop: int = 10
    bpso_iters: int = 10
    cnn_arch: NetworkConfig = None

    def __post_init__(self):
        if min(self.n_tx, self.n_users, self.n_select,
               self.bpso_pop, self.bpso_iters) < 1:
            raise ValueError("all op-count dimensions must be positive")
        if self.cnn_arch is None:
            self.cnn_arch = NetworkConfig(
                in_height=self.n_users,
                in_width=self.n_tx,
                n_classes=comb(self.n_users, self.n_select),
            )


def count_ops(model: OpCountModel, algorithm: str) -> int:
    """Complex-operation count of one online selection pass."""
    per_subset = model.n_tx ** 2 * model.n_select ** 2
    alg = algorithm.lower()
    if alg == "es":
        return comb(model.n_users, model.n_select) * per_subset
    if alg == "bpso":
        return model.bpso_pop * model.bpso_iters * per_subset
    if alg == "greedy":
        return model.n_users * per_subset
    if alg == "cnn":
        return multiply_count(model.cnn_arch)
    raise ValueError(f"unknown algorithm {algorithm!r}")
