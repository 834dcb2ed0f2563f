"""
Configuration schemas for the tracker.
Every numeric default lives here, so full scale vs desk scale is a config swap.
"""

import math
from enum import Enum
from typing import List, Optional, Tuple

from pydantic import BaseModel, Field, model_validator


class EpisodeKind(str, Enum):
    """Kinds of generated episodes"""
    STATIC = "static"
    DYNAMIC = "dynamic"


class PrimitiveShape(str, Enum):
    CUBOID = "cuboid"
    SPHERE = "sphere"


class Method(str, Enum):
    """Tracker variants compared by the benchmark"""
    TRAINED = "trained"
    RANDOM = "random"
    ZERO_MOTION = "zero_motion"
    NO_SEARCH_REGION = "no_search_region"
    NO_SEARCH_REGION_HALF = "no_search_region_half_res"
    NO_STATIC_SELECTION = "no_static_selection"


class Split(str, Enum):
    ALL = "all"
    STATIC = "static"
    MOVING = "moving"


class ConvStage(BaseModel):
    """Strided 3D convolution stage of the encoder half"""
    kernel: int = Field(default=4, ge=1)
    stride: int = Field(default=2, ge=1)
    out_channels: int = Field(ge=1)


class DeconvStage(BaseModel):
    """Decoder stage; stride > 1 is a transposed convolution"""
    kernel: int = Field(default=4, ge=1)
    stride: int = Field(default=2, ge=1)
    out_channels: int = Field(ge=1)
    skip_source: Optional[int] = Field(default=None, description="Encoder stage whose output is concatenated after this stage")


class EncoderSpec(BaseModel):
    """3D conv encoder-decoder with skip connections"""
    input_channels: int = Field(default=4, ge=1)
    encoder_stages: List[ConvStage]
    decoder_stages: List[DeconvStage]
    final_kernel: int = Field(default=1, ge=1)
    final_channels: int = Field(default=16, ge=1)
    l2_normalize_output: bool = True
    leaky_slope: float = Field(default=0.1, ge=0.0)

    @model_validator(mode="after")
    def _check_skips(self) -> "EncoderSpec":
        # spatial scale (downsampling factor) after each encoder stage
        enc_scales = []
        scale = 1
        for stage in self.encoder_stages:
            scale *= stage.stride
            enc_scales.append(scale)
        for d, stage in enumerate(self.decoder_stages):
            if stage.stride > 1 and stage.kernel < stage.stride:
                raise ValueError(f"decoder stage {d}: kernel must be >= stride")
            if scale % stage.stride:
                raise ValueError(f"decoder stage {d} upsamples past the input resolution")
            scale //= stage.stride
            if stage.skip_source is not None:
                if not 0 <= stage.skip_source < len(self.encoder_stages):
                    raise ValueError(f"decoder stage {d}: skip source {stage.skip_source} is not an encoder stage")
                if enc_scales[stage.skip_source] != scale:
                    raise ValueError(f"decoder stage {d}: skip source {stage.skip_source} has a different spatial size")
        if scale != 1:
            raise ValueError("decoder must restore the input resolution")
        return self

    @property
    def stride_product(self) -> int:
        return math.prod(s.stride for s in self.encoder_stages)

    @property
    def feature_dim(self) -> int:
        return self.final_channels


DEFAULT_DESK_ENCODER = EncoderSpec(
    encoder_stages=[ConvStage(kernel=4, stride=2, out_channels=16), ConvStage(kernel=4, stride=2, out_channels=32)],
    decoder_stages=[
        DeconvStage(kernel=4, stride=2, out_channels=32, skip_source=0),
        DeconvStage(kernel=4, stride=2, out_channels=16),
    ],
    final_kernel=1,
    final_channels=16,
)

DEFAULT_FULL_ENCODER = EncoderSpec(
    encoder_stages=[
        ConvStage(kernel=4, stride=2, out_channels=64),
        ConvStage(kernel=4, stride=2, out_channels=128),
        ConvStage(kernel=4, stride=2, out_channels=192),
    ],
    decoder_stages=[
        DeconvStage(kernel=4, stride=2, out_channels=256, skip_source=1),
        DeconvStage(kernel=4, stride=2, out_channels=256, skip_source=0),
        DeconvStage(kernel=4, stride=2, out_channels=64),
    ],
    final_kernel=1,
    final_channels=64,
)


class SimConfig(BaseModel):
    """Procedural RGB-D world"""
    image_width: int = Field(default=64, ge=1)
    image_height: int = Field(default=64, ge=1)
    fov_degrees: float = Field(default=60.0, gt=0.0, lt=180.0)
    frame_count: int = Field(default=9, ge=1, description="Initial frame plus eight tracked frames")
    n_cameras: int = Field(default=4, ge=1)
    n_viewpoints: int = Field(default=18, ge=1, description="Candidate viewpoints on the rig hemisphere")
    rig_radius: float = Field(default=20.0, gt=0.0)
    elevation_range_deg: Tuple[float, float] = (25.0, 55.0)
    yaw_jitter_deg: float = 6.0
    elevation_jitter_deg: float = 3.0
    radius_jitter: float = 1.0
    target_jitter: float = 0.5
    scene_half_size: float = Field(default=12.0, gt=0.0, description="Half side of the area holding objects")
    ground_half_size: float = Field(default=20.0, gt=0.0)
    static_count_range: Tuple[int, int] = (4, 8)
    mover_count_range: Tuple[int, int] = (1, 2)
    mover_dims: Tuple[float, float, float] = (4.0, 1.6, 2.0)
    mover_dims_jitter: float = 0.2
    parked_probability: float = Field(default=0.3, ge=0.0, le=1.0)
    speed_range: Tuple[float, float] = (0.4, 1.0)
    yaw_rate_max_deg: float = 3.0
    clearance: float = Field(default=0.75, ge=0.0, description="Minimum footprint gap between movers and other geometry")
    depth_noise_std: float = Field(default=0.0, ge=0.0)
    pose_noise_translation_std: float = Field(default=0.0, ge=0.0)
    pose_noise_rotation_deg: float = Field(default=0.0, ge=0.0)
    max_attempts: int = Field(default=200, ge=1)


class GridConfig(BaseModel):
    """Scene grid and search-region geometry"""
    scene_center: Tuple[float, float, float] = (0.0, 1.0, 0.0)
    scene_extent: Tuple[float, float, float] = (32.0, 4.0, 32.0)
    scene_resolution: Tuple[int, int, int] = (64, 16, 64)
    search_extent: Tuple[float, float, float] = (16.0, 2.0, 16.0)
    search_resolution: Optional[Tuple[int, int, int]] = Field(
        default=None, description="Defaults to half of scene_resolution"
    )

    def resolved_search_resolution(self) -> Tuple[int, int, int]:
        if self.search_resolution is not None:
            return tuple(self.search_resolution)
        return tuple(max(1, r // 2) for r in self.scene_resolution)


class TrainConfig(BaseModel):
    """Self-supervised training: contrastive stage 1/3 and reliability stage 2"""
    temperature: float = Field(default=0.07, gt=0.0)
    include_positive_in_denominator: bool = True
    dictionary_capacity: int = Field(default=4096, ge=1)
    negatives_per_positive: int = Field(default=512, ge=1)
    momentum: float = Field(default=0.999, ge=0.0, lt=1.0)
    pairs_per_batch: int = Field(default=512, ge=1)
    views_per_batch: int = Field(default=1, ge=1)
    learning_rate: float = Field(default=1e-4, gt=0.0)
    adam_betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    stage1_iterations: int = Field(default=200, ge=0)
    stage2_iterations: int = Field(default=200, ge=0)
    stage3_iterations: int = Field(default=100, ge=0)
    reliability_hidden: int = Field(default=32, ge=1)
    reliability_learning_rate: float = Field(default=1e-3, gt=0.0)
    reliability_samples: int = Field(default=512, ge=1, description="Samples per label class per batch")
    reliability_threshold: float = Field(default=0.9, gt=0.0, lt=1.0)
    use_static_selection: bool = True
    curriculum_passes: int = Field(default=1, ge=1)
    eval_every: int = Field(default=50, ge=1)
    retrieval_queries: int = Field(default=64, ge=1)
    retrieval_candidates: int = Field(default=1024, ge=2)
    grid_cache_size: int = Field(default=256, ge=0, description="Single-view input grids kept in the training LRU cache")


class TrackConfig(BaseModel):
    """Test-time tracking"""
    sharpness: float = Field(default=1.0 / 0.07, gt=0.0, description="Multiplier on dot products inside the soft argmax")
    ransac_iterations: int = Field(default=256, ge=1)
    inlier_threshold: float = Field(default=0.25, gt=0.0)
    min_inliers: int = Field(default=3, ge=3)
    min_inlier_fraction: float = Field(default=0.1, ge=0.0, le=1.0)
    template_all_in_box: bool = False
    use_search_region: bool = True
    resolution_scale: float = Field(default=1.0, gt=0.0, le=1.0)


class EvalConfig(BaseModel):
    iou_frames: List[int] = Field(default_factory=lambda: [2, 4, 6, 8])
    moving_threshold: float = Field(default=1.0, ge=0.0, description="Total ground-truth displacement splitting static from moving")
    run_ablations: bool = True


class RunConfig(BaseModel):
    """Top-level configuration shared by every subcommand"""
    seed: int = 0
    threads: int = Field(default=1, ge=1)
    sim: SimConfig = Field(default_factory=SimConfig)
    grid: GridConfig = Field(default_factory=GridConfig)
    encoder: EncoderSpec = Field(default_factory=lambda: DEFAULT_DESK_ENCODER.model_copy(deep=True))
    train: TrainConfig = Field(default_factory=TrainConfig)
    track: TrackConfig = Field(default_factory=TrackConfig)
    evaluation: EvalConfig = Field(default_factory=EvalConfig)
