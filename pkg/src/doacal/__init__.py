"""doacal: direction finding with learned calibration of angular-dependent
hardware impairments.

Simulates multi-antenna uplink CSI with configurable impairment
profiles, provides classical DBF/MUSIC baselines, and reconstructs
sparse spatial spectra through a coarray formulation solved by a
CNN-calibrated sparse conjugate-gradient pipeline.
"""

from .simulate import (SPEED_OF_LIGHT, ArrayGeometry, CfrSet,
                       ClassicalImpairment, DirectionGrid, ImpairmentProfile,
                       ProfileSynthParams, Source, SourceScene,
                       SpatialAliasingWarning, WaveformConfig,
                       apply_classical_impairment, generate_cfr, manifold,
                       phase_error_curves, scale_profile, steering_vector,
                       synth_profile)
from .estimators import (CovarianceMatrix, SpatialSpectrum, dbf_spectrum,
                         music_spectrum, pick_aoa, sample_covariance)
from .coarray import (CoarraySignal, ProjectionMatrix, cached_projection,
                      coarray_dbf, coarray_manifold, devectorize, hpbw,
                      projection, vectorize_covariance)
from .beamformer import (AutoencoderParams, AutoencoderTrainConfig,
                         ResponseMetrics, SubregionPartition, beamform,
                         complexify, decode, encode, gating_target, realify,
                         response_metrics, route, train_autoencoder)
from .reconstruction import (CalibratorParams, CalibratorTrainConfig,
                             IterationRecord, ScgResult, SsrConfig, calibrate,
                             estimate_aoa, one_hot_label, reconstruct,
                             scg_solve, train_calibrator)

__version__ = "0.1.0"
