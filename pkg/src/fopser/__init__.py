"""fopser: future-observation-prediction pre-training of a causal
self-attention model over log-mel frames, with transfer to speech emotion
recognition by fine-tuning and by hypercolumn features.
"""

from .autodiff import Tensor
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .corpus import (
    EMOTIONS,
    CorpusManifest,
    SynthSpec,
    Utterance,
    Waveform,
    kfold_by_session,
    load_manifest,
    read_wav,
    split_speaker_independent,
    synth_corpus,
    write_manifest,
    write_wav,
)
from .errors import CorpusError, FopError, FormatError
from .features import (
    FeatureSequence,
    FrameConfig,
    NormStats,
    apply_norm,
    fit_norm,
    log_mel,
    mel_filterbank,
    read_features,
    stft_magnitude,
    write_features,
)
from .metrics import EvalResult, confusion_matrix, score_predictions, unweighted_average_recall, weighted_accuracy
from .model import (
    FopConfig,
    FopParams,
    LayerActivations,
    add_compat_config,
    causal_mask,
    fop_forward,
    fop_loss,
    init_fop_params,
    positional_encoding,
)
from .numerics import AdamState, GradReport, adam_init, adam_step, dropout, grad_check
from .training import (
    TrainConfig,
    classifier_fit_predict,
    evaluate,
    finetune,
    finetune_fit_predict,
    pooled_features,
    predict_labels,
    pretrain,
    write_summary,
)
from .transfer import (
    ClassifierConfig,
    FinetuneHead,
    HypercolumnFeature,
    LinearClassifier,
    classify,
    extract_feature,
    finetune_probs,
    hypercolumn_add,
    hypercolumn_concat,
    train_classifier,
)

__version__ = "0.1.0"
