"""Multi-scale curriculum 3D CNN for whole-breast malignancy classification."""

from .config import ExperimentConfig, load_config
from .evaluation import EvalReport, class_activation_map, evaluate_cv, make_folds
from .metrics import accuracy, auroc, roc_curve
from .model import ModelConfig, adapt_for_stage2, build_model, count_parameters, forward
from .phantom import PhantomConfig, generate_phantom, kinetic_curve
from .pipeline import BreastSample, PatchSample, augment, crop_air, normalize, resample_volume, sample_patch, split_breasts
from .training import TrainConfig, predict, train_naive, train_stage1, train_stage2

__version__ = "0.1.0"
