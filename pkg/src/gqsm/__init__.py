"""Piloted generalized quadrature spatial modulation (GQSM) and its
unit-vector-decomposition GaBP detectors, which never enumerate the
activation patterns.

Submodules
----------
core       constellations, codebooks, modulation, channels, rotation
priors     order-statistic, empirical and conditional index priors
uvd        the baseline message-passing detector
enhanced   conditional denoising and successive interference cancellation
baselines  ML, matched-filter bound, multiplexed GaBP, FLOP formulas
sim        seeded Monte-Carlo sweeps and equal-complexity reports
"""

__version__ = "0.1.0"

from .core import (ActivationCodebook, Constellation, DispersionCodebook, GqsmFrame,
                   ParameterError, RealSystem, apply_channel, build_codebook,
                   build_effective_channel, ebn0_to_n0, iq_decouple, modulate,
                   optimize_rotation, rotated_constellation)
from .priors import (ConditionalPmfTable, IndexPmf, conditional_pmf_table, empirical_pmf,
                     order_statistic_pmf, prior_matrix)
from .uvd import DetectorParams, detect, detect_batch
from .enhanced import EnhancedParams, detect_enhanced, detect_enhanced_batch
from .baselines import (ComplexityModel, MuxConfig, complexity_eval, mfb_detect,
                        ml_detect, mux_linear_gabp_detect)
from .sim import ExperimentConfig, run_ber_sweep

__all__ = [
    "ActivationCodebook", "Constellation", "DispersionCodebook", "GqsmFrame",
    "ParameterError", "RealSystem", "apply_channel", "build_codebook",
    "build_effective_channel", "ebn0_to_n0", "iq_decouple", "modulate",
    "optimize_rotation", "rotated_constellation",
    "ConditionalPmfTable", "IndexPmf", "conditional_pmf_table", "empirical_pmf",
    "order_statistic_pmf", "prior_matrix",
    "DetectorParams", "detect", "detect_batch",
    "EnhancedParams", "detect_enhanced", "detect_enhanced_batch",
    "ComplexityModel", "MuxConfig", "complexity_eval", "mfb_detect", "ml_detect",
    "mux_linear_gabp_detect",
    "ExperimentConfig", "run_ber_sweep",
]
