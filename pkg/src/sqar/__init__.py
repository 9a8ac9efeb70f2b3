"""Stochastic-quantization ensembles for adversarially robust classifiers.

Quantize inputs and hidden features into random bins, run many stochastic
members of one parent network, aggregate their predictions, and use the
exact quantizer PMFs to regularize training and to detect attacks through
the input-feature mutual information.
"""

from ._kernels import BACKEND
from .attacks import (AttackConfig, AttackReport, attack_batch,
                      evaluate_robustness, fgm, pgd)
from .data import Dataset, load_mnist, save_idx, synth_blobs, synth_digits
from .detector import (DetectorCalibration, RocCurve, calibrate, detect, roc,
                       roc_from_scores)
from .ensemble import (EnsembleOutput, SQEnsembleModel, build_model,
                       ensemble_eval, forward_ensemble, forward_member,
                       predict)
from .infotheory import (MIEstimate, entropy, mi_from_stack,
                         mutual_information, toy_two_feature_fixture)
from .quant import (BinGrid, FixedRange, PerVectorMinMax, QuantDistribution,
                    QuantizedVector, SqParams, binary_sq_pmf, make_bin_grid,
                    pmf_mean, quantize_vector, relaxed_sample, sample, sq_pmf)
from .training import (TrainConfig, load_checkpoint, loss, save_checkpoint,
                       train)

__version__ = "0.1.0"

__all__ = [
    "AttackConfig", "AttackReport", "BACKEND", "BinGrid", "Dataset",
    "DetectorCalibration", "EnsembleOutput", "FixedRange", "MIEstimate",
    "PerVectorMinMax", "QuantDistribution", "QuantizedVector", "RocCurve",
    "SQEnsembleModel", "SqParams", "TrainConfig", "attack_batch",
    "binary_sq_pmf", "build_model", "calibrate", "detect", "ensemble_eval",
    "entropy", "evaluate_robustness", "fgm", "forward_ensemble",
    "forward_member", "load_checkpoint", "load_mnist", "loss",
    "make_bin_grid", "mi_from_stack", "mutual_information", "pgd",
    "pmf_mean", "predict", "quantize_vector", "relaxed_sample", "roc",
    "roc_from_scores", "sample", "save_checkpoint", "save_idx", "sq_pmf",
    "synth_blobs", "synth_digits", "toy_two_feature_fixture", "train",
]
