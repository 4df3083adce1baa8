"""Backdoor-input firewall via batch-norm parameter-scaling consistency.

Load a suspicious classifier, build amplified views of its trailing
batch-norm layers, and flag inputs whose prediction confidence survives the
amplification. Includes the adaptive layer selector, detection metrics,
training-set purification, and a numeric lab for the Gaussian-mixture
variance-dominance theory behind the method.
"""

from .amplifier import AmplifiedView, amplify, view_forward
from .detector import (
    DetectionReport,
    DetectorConfig,
    SampleRecord,
    detect,
    effective_views,
    flag_scores,
    psc_label_consistency,
    psc_score,
    spc_score,
)
from .metrics import (
    F1Result,
    ScoredSample,
    auroc,
    f1_at_threshold,
    roc_curve,
    roc_to_csv,
    roc_to_svg,
)
from .modelio import (
    BatchNorm,
    ContainerError,
    Conv,
    GlobalAvgPool,
    LabeledSet,
    Linear,
    MaxPool,
    ModelGraph,
    ReLU,
    Residual,
    forward,
    load_dataset,
    load_model,
    save_dataset,
    save_model,
)
from .purifier import PurificationResult, purify
from .selector import SelectionResult, error_rate, select_k
from .tensor import (
    BnParams,
    batchnorm_infer,
    conv2d,
    global_avgpool,
    linear,
    maxpool2d,
    relu,
    softmax,
)
from .theory import (
    GaussianMixtureHead,
    NormThresholdCertificate,
    certify_norm_threshold,
    density_classify,
    sample_features,
    simplex_head,
    simulate_amplification,
)

__version__ = "0.1.0"
