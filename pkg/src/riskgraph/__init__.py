"""Risk assessment of traffic scenes with recursive neural networks over DPAGs."""

from .dpag import ColorState, Dpag, NodeLabel, ObjectType, hamming
from .encoder import IntersectionGeometry, ObjectSnapshot, SceneFrame, encode_scene, feature_matrix
from .errors import RiskGraphError
from .gradients import Batch, SupervisedPattern, p_gradients, s_gradients
from .harness import EvalMetrics, evaluate, repro_table3, split
from .network import Architecture, NetworkParams, forward, init_params, load_checkpoint, save_checkpoint
from .optimizers import bfgs_update, gradient_descent, quasi_newton, qnts_train, bpts_train
from .scenario import ScenarioConfig, default_scenario_config, detect_collision, generate_pattern_set

__version__ = "0.1.0"

__all__ = [
    "Architecture", "Batch", "ColorState", "Dpag", "EvalMetrics", "IntersectionGeometry",
    "NetworkParams", "NodeLabel", "ObjectSnapshot", "ObjectType", "RiskGraphError",
    "ScenarioConfig", "SceneFrame", "SupervisedPattern", "bfgs_update", "bpts_train",
    "default_scenario_config", "detect_collision", "encode_scene", "evaluate", "feature_matrix",
    "forward", "generate_pattern_set", "gradient_descent", "hamming", "init_params",
    "load_checkpoint", "p_gradients", "qnts_train", "quasi_newton", "repro_table3",
    "s_gradients", "save_checkpoint", "split",
]
