"""Wide-band spectrum classification from compressive measurements.

Synthesize scenes of narrow-band emitters, sample them below the Nyquist
rate, recover the spectrum by l1 minimisation, extract per-emitter
spectral features and classify modulations with a random forest.
"""

from .scene import (EmitterSpec, ModulationKind, SceneConfig, ServiceAllocation, TimeSeries, WidebandScene,
                    add_awgn, compose_scene, constellation, modulate_nb, random_scene)
from .frontend import (MeasurementRecord, SensingKind, SensingMatrix, acquire, build_sensing_matrix,
                       prefilter)
from .recovery import (RecoveryOperator, Solver, SolverOptions, SpectrumEstimate, dft, recover, solve_bp,
                       solve_lasso, solve_omp)
from .features import (FeatureVector, PsdEstimate, SupportSegment, detect_segments, estimate_psd,
                       extract_features, match_labels)
from .classifiers import (Dataset, ForestModel, NaiveBayesModel, TreeConfig, confusion_matrix, entropy,
                          information_gain, predict, predict_nbc, train_forest, train_nbc, train_tree)
from .bench import ExperimentConfig, SweepReport, emit_report, run_trial, sweep_compression, sweep_snr

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
