"""3D U-Net tumor segmentation workbench tuned by the Bat Algorithm.

The pipeline: generate (or import) volumetric data, search the learning rate
and batch size with the bat metaheuristic against a proxy-training fitness,
train the from-scratch U-Net, then evaluate with threshold sweeps, ROC/AUC,
and per-sample Dice statistics. See the ``batseg`` CLI for the end-to-end
workflow.
"""

from .bat import BatConfig, BatRunHistory, bat_step, decode_position, init_population, optimize
from .data import SegSample, SplitIndex, SynthSpec, augment, generate_dataset, make_batches, split_dataset
from .metrics import (
    ConfusionCounts,
    DiceSummary,
    MetricSet,
    RocCurve,
    SweepEntry,
    confusion,
    dice_coefficient,
    dice_per_sample,
    f1_from_pr,
    metric_set,
    roc_auc,
    threshold_sweep,
)
from .training import EpochLog, Hyperparams, bce_loss, evaluate_model, train, train_step
from .unet import (
    ConvLayer,
    UNetConfig,
    UNetModel,
    concat_channels,
    conv3d_forward,
    init_model,
    load_checkpoint,
    maxpool3d,
    relu,
    save_checkpoint,
    sigmoid,
    unet_forward,
    upsample3d,
)
from .volume import (
    MaskVolume,
    Shape3,
    Volume,
    mask_from_probs,
    normalize_max,
    read_volume,
    trilinear_resize,
    write_volume,
)

__version__ = "0.1.0"
