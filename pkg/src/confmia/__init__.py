"""Confidence-based likelihood-ratio membership inference toolkit."""

from .attack import (AttackResult, AttackVariant, GaussianParams, fit_gaussian,
                     normal_cdf, offline_score, online_score, run_attack)
from .dataset import Dataset, SynthSpec, generate_synthetic, load_dataset, save_dataset
from .errors import (FormatError, NumericalError, TrainingDivergenceError,
                     ValidationError)
from .evaluation import (MetricsReport, RocCurve, auc, emit_report, metrics, roc_curve,
                         tpr_at_fpr)
from .model import (Architecture, Classifier, TrainConfig, cross_entropy, forward,
                    gradient_check, train)
from .pipeline import PipelineConfig, run_pipeline
from .scoring import ScoreMatrix, ScoreVariant, score_matrix
from .shadows import (EnsembleConfig, MembershipMask, PredictionMatrix, build_mask,
                      predict_matrix, train_ensemble)

__version__ = "0.1.0"
