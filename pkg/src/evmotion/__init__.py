"""Motion recovery of fast-moving objects from blurry frames plus events."""

from .config import RunConfig, load_config, parse_config
from .dataset import Dataset, FrameBundle, load_dataset
from .errors import (BehindCamera, Diverged, EvMotionError, InputMismatch, NoForeground,
                     SingularInnovation, ValidationError)
from .events import (EventStream, accumulate_bins, cumulative_event_maps, edi_deblur,
                     generate_events, synthesize_blur)
from .gaussians import GaussianCloud, centroid, load_cloud, save_cloud, splat_render
from .geometry import Camera, PoseSE3, SimilarityTransform, UnitQuaternion
from .kalman import KalmanParams, KalmanState, KalmanTracker
from .losses import LossWeights
from .metrics import psnr, ssim, trajectory_metrics
from .msa import MsaConfig, learning_rate
from .recovery import (EdiDeblurrer, MotionRecoverer, RecoveryConfig, SceneRegistrar,
                       TrajectoryEstimate, recover, register_to_scene)
from .scenesim import CaptureConfig, RigidBodySpec, make_dataset, simulate_pose

__version__ = "0.1.0"

__all__ = [
    "BehindCamera", "Camera", "CaptureConfig", "Dataset", "Diverged", "EdiDeblurrer",
    "EvMotionError", "EventStream", "FrameBundle", "GaussianCloud", "InputMismatch",
    "KalmanParams", "KalmanState", "KalmanTracker", "LossWeights", "MotionRecoverer",
    "MsaConfig", "NoForeground", "PoseSE3", "RecoveryConfig", "RigidBodySpec", "RunConfig",
    "SceneRegistrar", "SimilarityTransform", "SingularInnovation", "TrajectoryEstimate",
    "UnitQuaternion", "ValidationError", "accumulate_bins", "centroid", "cumulative_event_maps",
    "edi_deblur", "generate_events", "learning_rate", "load_cloud", "load_config",
    "load_dataset", "make_dataset", "parse_config", "psnr", "recover", "register_to_scene",
    "save_cloud", "simulate_pose", "splat_render", "ssim", "synthesize_blur",
    "trajectory_metrics",
]
