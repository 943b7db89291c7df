"""camseq: two-view sequence classification with collaborative temporal
attention and a mutual-aid recurrent cell."""

from .cells import (CellState, CollabOptions, CollaboratorParams, LstmParams,
                    collaborate_cell, collaborator_gates, lstm_encode, lstm_step,
                    mar_encode, mar_step, mutual_filter, normalize_attention_pair)
from .attention import AttentionParams, attend, attention_scores
from .data import (Dataset, SynthSpec, ViewSample, generate_synthetic,
                   load_dataset, normalize_length, save_dataset)
from .estimator import CamClassifier
from .gradcheck import finite_diff_check
from .model import (CamParams, FusionHead, StageOneView, StageTwoModel,
                    correlative_fusion, predict, predict_full, stage1_forward,
                    stage2_forward)
from .tensor import DiffArray, Tape, backward
from .training import (Adam, RunConfig, TrainReport, ablation_suite, evaluate,
                       train_all, train_fusion, train_stage1, train_stage2)

__version__ = "0.1.0"

__all__ = [
    "Adam", "AttentionParams", "CamClassifier", "CamParams", "CellState",
    "CollabOptions", "CollaboratorParams", "Dataset", "DiffArray", "FusionHead",
    "LstmParams", "RunConfig", "StageOneView", "StageTwoModel", "SynthSpec",
    "Tape", "TrainReport", "ViewSample", "ablation_suite", "attend",
    "attention_scores", "backward", "collaborate_cell", "collaborator_gates",
    "correlative_fusion", "evaluate", "finite_diff_check", "generate_synthetic",
    "load_dataset", "lstm_encode", "lstm_step", "mar_encode", "mar_step",
    "mutual_filter", "normalize_attention_pair", "normalize_length", "predict",
    "predict_full", "save_dataset", "stage1_forward", "stage2_forward",
    "train_all", "train_fusion", "train_stage1", "train_stage2",
]
