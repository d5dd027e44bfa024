"""Spurious-correlation auditing for a small image classifier.

Build a class-wise decoy dataset, train a one-conv classifier, locate
spurious regions via 4x4 patch-exchange perturbation and MC-dropout
certainty curves, and unlearn them with GradCAM-penalized fine-tuning.
"""

from .audit import (
    AuditReport,
    MetricSummary,
    change_metrics,
    emit_report,
    identify_spurious,
    run_audit,
)
from .dataset import (
    DatasetSplit,
    DecoySpec,
    class_subset,
    inject_decoys,
    load_idx,
    save_idx,
)
from .gradcam import gradcam, norm_minmax
from .grid import GridSpec, cell_bounds
from .model import (
    ForwardTrace,
    ModelConfig,
    ParameterSet,
    accuracy,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .perturb import CertaintyEstimate, PerturbationCurve, mc_certainty, patch_exchange, sweep
from .tensor import conv2d_same, dense_affine, finite_difference_grad, softmax
from .training import (
    TrainConfig,
    classification_loss,
    combined_loss,
    explanation_loss,
    finetune,
    loss_gradient,
    train,
)

__version__ = "0.1.0"
