from crest.environments.base import Environment
from crest.environments.blocks import (
    BlocksEnv, TargetShiftConfig, blocks_evaluate, blocks_optimal, blocks_target_env, blocks_target_evaluate,
    color_half_distribution, color_indices,
)
from crest.environments.crate import (
    STIFFNESS_LEVELS, ArcSkillTrace, CrateEnv, crate_arc_waypoints, crate_evaluate,
)
from crest.environments.mathmanip import (
    NOISE_LEVELS, MathManipEnv, MathManipInstance, mathmanip_evaluate, mathmanip_generate,
)

__all__ = [
    "ArcSkillTrace", "BlocksEnv", "CrateEnv", "Environment", "MathManipEnv", "MathManipInstance", "NOISE_LEVELS",
    "STIFFNESS_LEVELS", "TargetShiftConfig", "blocks_evaluate", "blocks_optimal", "blocks_target_env",
    "blocks_target_evaluate", "color_half_distribution", "color_indices", "crate_arc_waypoints", "crate_evaluate",
    "mathmanip_evaluate", "mathmanip_generate",
]
