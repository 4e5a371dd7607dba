"""CNN-based user selection for downlink mmWave massive MU-MIMO.

Channel simulation, hybrid precoding, classical selection baselines
(exhaustive / greedy / binary PSO), dataset generation and a from-scratch
CNN classifier, plus a CLI reproducing the rate and complexity studies.
"""

from .channel import (ArrayGeometry, ChannelConfig, apply_csi_error,
                      generate_channel_matrix, generate_user_channel,
                      square_geometry, substream, upa_steering)
from .cnn import NetworkConfig, TrainConfig, predict, train
from .dataset import build_dataset, label_sample, load_dataset, normalize_sample
from .precoding import PrecoderPair, analog_precoder, baseband_zf, hybrid_precoders
from .rates import OpCountModel, RateReport, count_ops, evaluate_selection, sinr_per_user, sum_rate
from .selection import (BpsoParams, bpso_select, combo_rank, combo_unrank,
                        exhaustive_search, greedy_select)

__version__ = "0.1.0"
