"""Near-field map super-resolution and far-field transformation toolkit.

Synthesizes exact planar near-field scans from dipole collections, restores
undersampled scans (trainable encoder-decoder network plus classical
baselines), and transforms restored scans into far-field radiation patterns
through the plane-wave spectrum, with evaluation studies tying it together.
"""

from .baselines import (
    CsConfig,
    KrigingError,
    VariogramModel,
    bicubic_upsample,
    cs_reconstruct,
    fit_variogram,
    kriging_upsample,
)
from .dataio import (
    BundleError,
    ChannelMap,
    Dataset,
    DatasetConfig,
    SamplePair,
    add_noise,
    augment_rotations,
    build_dataset,
    bundle_digest,
    channel_maps,
    denormalize,
    downsample,
    load_dataset,
    load_fieldmap,
    normalize,
    read_bundle,
    save_fieldmap,
    wrap_phase,
    write_bundle,
)
from .evaluation import (
    EvalError,
    attribution_study,
    compare_study,
    end_to_end,
    error_attribution,
    factor_study,
    map_metrics,
    restore_map,
    snr_study,
    summarize,
)
from .fieldsynth import (
    PROFILES,
    AntennaScene,
    DipoleSource,
    FieldMap,
    GridSpec,
    SceneError,
    TruncationResult,
    analytic_farfield,
    check_truncation,
    default_grid,
    hertzian_dipole_field,
    random_scene,
    synthesize_nearfield,
)
from .losses import (
    LossWeights,
    MsSsimConfig,
    composite_mag,
    composite_phase,
    loss_with_grad,
    mae,
    ms_ssim,
    ms_ssim_loss,
    periodic_phase_loss,
    ssim_components,
)
from .neuralnet import (
    NfsNet,
    TrainConfig,
    TrainingError,
    TrainResult,
    UNetConfig,
    adam_init,
    adam_step,
    build_model,
    default_train_config,
    default_unet_config,
    load_params,
    lr_schedule,
    predict,
    save_params,
    train,
    upsample_input,
)
from .nf2ff import (
    FarFieldPattern,
    PatternCut,
    PlaneWaveSpectrum,
    TransformError,
    extract_cut,
    pattern_error,
    plane_wave_spectrum,
    read_cut_csv,
    to_farfield,
    write_cut_csv,
)

__version__ = "0.1.0"
