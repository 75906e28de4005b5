"""Flexible-modal face anti-spoofing toolkit.

Train one multi-modal (RGB + depth + IR) liveness model and deploy it under
any modality subset. Ships the three feature-fusion operators, the DropModal
augmentation, the four deployment protocols, the PAD metric suite, and
parameter/FLOPs accounting, all runnable at desk scale on synthetic data.
"""

from .core import (
    FeatureBundle,
    FlexFasError,
    Label,
    MODALITIES,
    Modality,
    ModalitySample,
    ScoreRecord,
    validate_sample,
)
from .fusion import FusionConfig, FusionKind, build_fusion
from .backbones import Arch, FlexModel, HeadKind, ModelConfig, build_model
from .augment import DropModalConfig, drop_modal, mask_modalities
from .metrics import (
    EvalReport,
    ThresholdRule,
    build_report,
    classify_rates,
    eer_threshold,
    tpr_at_fpr,
)
from .protocols import (
    DatasetManifest,
    ProtocolSpec,
    RunMode,
    RunPlan,
    SampleSet,
    Split,
    load_manifest,
    run_separate,
    run_unified,
    standard_protocols,
)
from .efficiency import CostReport, cost_report, count_flops, count_params
from .synthgen import SynthConfig, generate, write_dataset
from .trainer import OptimizerKind, TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
