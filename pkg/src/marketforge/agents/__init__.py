from .a2c import A2cConfig, A2cPolicy, returns_to_go
from .dqn import DqnConfig, DqnPolicy, act_epsilon_greedy
from .mlp import Mlp, mlp_from_blob, mlp_to_blob, sgd_step
from .policy import ConstantActionPolicy, Policy, RandomTradingPolicy, ReplayBuffer, Transition
from .training import TrainResult, state_vector, trading_observation_scale, train_agent

__all__ = [
    "A2cConfig",
    "A2cPolicy",
    "ConstantActionPolicy",
    "DqnConfig",
    "DqnPolicy",
    "Mlp",
    "Policy",
    "RandomTradingPolicy",
    "ReplayBuffer",
    "TrainResult",
    "Transition",
    "act_epsilon_greedy",
    "mlp_from_blob",
    "mlp_to_blob",
    "returns_to_go",
    "sgd_step",
    "state_vector",
    "trading_observation_scale",
    "train_agent",
]
