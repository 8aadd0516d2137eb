"""Few-shot generalist anomaly detection and segmentation over extracted features.

The engine consumes pre-extracted vision-language features (a binary container
of class-token embeddings and per-layer patch grids plus averaged text
prototypes), trains four lightweight adapters, and produces image-level
anomaly scores with pixel-level anomaly maps, plus an exact evaluation suite.
"""

from .dasl import (
    PatchTextAdapter,
    SemanticMaps,
    dasl_pixel_map,
    fuse_image_score,
    semantic_maps,
    semantic_score,
)
from .errors import (
    ConfigError,
    CorruptFileError,
    DivergenceError,
    FormatError,
    GadsError,
    InsufficientNormalsError,
    NormalizationError,
    ShapeError,
    UndefinedMetricError,
    ValidationError,
)
from .features import (
    FeatureRecord,
    FeatureSet,
    ManifestEntry,
    PromptBank,
    TextPrototypes,
    read_feature_file,
    read_manifest,
    read_prototype_file,
    sample_prompts,
    write_feature_file,
    write_manifest,
    write_prototype_file,
)
from .inference import AnomalyOutput, build_prompt_banks, infer_record, infer_set
from .metrics import (
    EvalReport,
    aggregate_reports,
    auroc,
    average_precision,
    evaluate,
    pro,
)
from .oasl import oasl_maps, oasl_pixel_map
from .residual import (
    ImageAdapter,
    ResidualHead,
    ResidualMap,
    image_prototype,
    image_residual,
    patch_residual_map,
    patch_residual_map_layer,
    residual_score,
)
from .synth import SynthConfig, generate, write_synth
from .training import (
    AdapterParams,
    Trainer,
    TrainConfig,
    dice_loss,
    finite_difference_gradients,
    focal_loss_binary,
    focal_loss_map,
    load_checkpoint,
    loss_dasl,
    loss_oasl,
    max_relative_error,
    save_checkpoint,
    train,
    upsample,
)

__version__ = "0.1.0"
