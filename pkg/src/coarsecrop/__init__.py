"""coarsecrop: coarse object-crop generation and objectness evaluation.

Turns uncurated scene images into pseudo object-centric crop datasets:
convolutional features are channel-summed into an objectness score map,
dense anchors are scored against it, and the top boxes after NMS become the
crops. The same toolkit measures any cropping strategy's objectness against
ground-truth masks and ships reference implementations of the two SSL
losses the crops are destined for.
"""

__version__ = "0.1.0"

from .anchor_engine import (
    AnchorConfig,
    ScoredBox,
    generate_anchors,
    nms,
    score_anchors,
    select_crops,
)
from .crop_strategies import (
    CropSet,
    StrategyKind,
    StrategySpec,
    grid_crop,
    gt_crop,
    gtpad_crop,
    image_crop,
    our_crop,
    poor_crop,
)
from .objectness_eval import (
    CropCategory,
    InstanceMask,
    ObjectnessReport,
    categorize,
    crop_objectness,
    strategy_report,
)
from .ssl_losses import byol_loss, infonce_loss
from .tensor_core import (
    FeatureMap,
    RawScoreMap,
    ScoreMap,
    SummedAreaTable,
    bilinear_upsample,
    build_sat,
    channel_sum,
    minmax_normalize,
)

__all__ = [
    "__version__",
    "AnchorConfig",
    "ScoredBox",
    "generate_anchors",
    "score_anchors",
    "nms",
    "select_crops",
    "CropSet",
    "StrategyKind",
    "StrategySpec",
    "image_crop",
    "grid_crop",
    "gt_crop",
    "gtpad_crop",
    "poor_crop",
    "our_crop",
    "CropCategory",
    "InstanceMask",
    "ObjectnessReport",
    "categorize",
    "crop_objectness",
    "strategy_report",
    "byol_loss",
    "infonce_loss",
    "FeatureMap",
    "RawScoreMap",
    "ScoreMap",
    "SummedAreaTable",
    "channel_sum",
    "minmax_normalize",
    "bilinear_upsample",
    "build_sat",
]
