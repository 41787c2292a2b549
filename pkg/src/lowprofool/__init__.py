"""Imperceptible adversarial examples on tabular data (LowProFool) with FGSM and DeepFool baselines."""

from .attacks import AttackOutcome, AttackParams, deep_fool, fgsm, low_pro_fool, perceptibility
from .importance import ImportanceVector, importance_vector, pearson
from .metrics import ExperimentReport, build_report
from .model import Mlp, MlpConfig
from .tabular_data import Dataset, Schema, SyntheticSpec

__version__ = "0.1.0"
