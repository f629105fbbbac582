"""Weakly guided direction-of-arrival tracking of moving speakers.

Wrapped Kalman and bootstrap particle filters, optionally fed back with the
output of a spatially selective enhancer, plus the simulation and evaluation
tooling around them.
"""

from .array import MicArray, aliasing_bin_limit, circular_array, default_array, steering_vector
from .stft import Spectrogram, StftConfig, analyze, synthesize
from .trackers import DoaTrack, TrackerConfig, make_tracker, run_tracker

__all__ = [
    "MicArray", "aliasing_bin_limit", "circular_array", "default_array", "steering_vector",
    "Spectrogram", "StftConfig", "analyze", "synthesize",
    "DoaTrack", "TrackerConfig", "make_tracker", "run_tracker",
]

__version__ = "0.1.0"
