"""Simulation of covert communication under the square root law.

Alice hides pilot-aided QPSK pulses in a sparse, secret subset of pulse slots;
Bob decodes them with the shared key while Willie runs the optimal
likelihood-ratio test. The occupancy rate is chosen so Willie's detection
error stays above 1/2 - delta.
"""

from .channel import ChannelParams, transmit, transmit_stream
from .covertness_budget import CovertBudget, alpha_n, hellinger_oracle, relative_entropy_oracle
from .errors import CovertSRLError
from .experiments import ExperimentConfig, fit_srl, report, run_sweep
from .optimizer import Bounds, DesignPoint, evaluate_design, optimize, propose_next
from .pulse_shaping import PulsePair, PulseParams, assemble_pulse, select_sigma
from .receiver import DecodeReport, decode_frame, estimate_phase, sync_preamble
from .transmitter import SecretKey, build_frame, build_preamble, encode_message, gen_secret
from .warden import DetectionReport, SnrEstimate, empirical_pe, estimate_snr, frame_llr

__version__ = "0.1.0"

__all__ = [
    "ChannelParams", "transmit", "transmit_stream",
    "CovertBudget", "alpha_n", "hellinger_oracle", "relative_entropy_oracle",
    "CovertSRLError",
    "ExperimentConfig", "fit_srl", "report", "run_sweep",
    "Bounds", "DesignPoint", "evaluate_design", "optimize", "propose_next",
    "PulsePair", "PulseParams", "assemble_pulse", "select_sigma",
    "DecodeReport", "decode_frame", "estimate_phase", "sync_preamble",
    "SecretKey", "build_frame", "build_preamble", "encode_message", "gen_secret",
    "DetectionReport", "SnrEstimate", "empirical_pe", "estimate_snr", "frame_llr",
]
