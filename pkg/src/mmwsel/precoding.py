"""Two-stage hybrid precoding for a selected-user channel.

Analog stage: one constant-modulus column per selected user, phase-matched
to that user's channel (conjugate phase extraction).  Baseband stage:
zero-forcing on the k x k effective channel via an SVD pseudo-inverse with
relative cutoff 1e-12, followed by per-stream power normalization so that
every column of F_RF @ F_BB has unit Euclidean norm.
"""

from dataclasses import dataclass

import numpy as np

ZF_RCOND = 1e-12


@dataclass
class PrecoderPair:
    """Analog (n_tx, k) and baseband (k, k) precoders for k selected users."""

    f_rf: np.ndarray
    f_bb: np.ndarray
    rank_deficient: bool = False


def analog_precoder(b: np.ndarray) -> np.ndarray:
    """Conjugate-phase analog precoder; column u = exp(j*angle(b_u^H))/sqrt(n_tx)."""
    n_tx = b.shape[1]
    return np.exp(1j * np.angle(np.conj(b).T)) / np.sqrt(n_tx)


def _pinv_with_flag(h_eff: np.ndarray):
    u, s, vh = np.linalg.svd(h_eff)
    cutoff = ZF_RCOND * s[0]
    keep = (s > cutoff) & (s > 0.0)
    s_inv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    pinv = (vh.conj().T * s_inv) @ u.conj().T
    return pinv, bool(np.any(~keep))


def baseband_zf(b: np.ndarray, f_rf: np.ndarray):
    """Zero-forcing baseband precoder on H_eff = B @ F_RF.

    Returns (f_bb, rank_deficient).  A numerically singular effective
    channel is not an error: the lost streams simply contribute no rate,
    and the flag is surfaced for the caller.
    """
    h_eff = b @ f_rf
    f_bb, rank_deficient = _pinv_with_flag(h_eff)
    scale = np.linalg.norm(f_rf @ f_bb, axis=0)
    nonzero = scale > 0.0
    f_bb[:, nonzero] /= scale[nonzero]
    return f_bb, rank_deficient


def hybrid_precoders(b: np.ndarray) -> PrecoderPair:
    """Full two-stage precoder pair for the selected-channel matrix ``b``."""
    f_rf = analog_precoder(b)
    f_bb, rank_deficient = baseband_zf(b, f_rf)
    return PrecoderPair(f_rf=f_rf, f_bb=f_bb, rank_deficient=rank_deficient)
