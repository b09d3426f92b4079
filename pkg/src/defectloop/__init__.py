"""Human-in-the-loop active learning for binary image defect classification."""

from .classifier import (EvalResult, GapDenseClassifier, bce_loss,
                         gradient_check, load_checkpoint,
                         predict_proba_samples, save_checkpoint)
from .datasets import (Dataset, Sample, SynthParams, generate_synthetic,
                       ingest_directory, split)
from .engine import (ActiveLearningRun, ExperimentConfig, PoolState,
                     QueryBatch, SimulatedOracle, run_experiment)
from .errors import (ConfigurationError, DataError, DefectLoopError,
                     InsufficientPoolError, LabelConflictError,
                     RunCompleteError, SampleNotFoundError,
                     TrainingDivergedError, ValidationError)
from .features import (FixedConvExtractor, PrecomputedExtractor,
                       RawDownsampleExtractor, gap2d, load_feature_csv,
                       make_extractor, save_feature_csv)
from .metrics import (ComparisonRow, MetricsLog, MetricsRow, RunSummary,
                      compare_runs, last_query_summary, read_metrics_csv,
                      samples_to_reach, write_comparison_csv,
                      write_metrics_csv)
from .strategies import (StrategyKind, binary_prob_vector, score,
                         score_entropy, score_least_confidence, score_margin,
                         select_batch)

__version__ = "0.1.0"
