from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

FZI_MODES = ("vanilla_ce", "decomposed", "ablation_mix")
CRITICS = ("scalar", "categorical", "quantile")


@dataclass(frozen=True)
class AgentConfig:
    """Learning hyperparameters.  The defaults are sized for long runs;
    small-scale experiments override batch size, buffer and warm-up."""

    gamma: float = 0.99
    epsilon: float = 0.5  # decomposition proportion
    lam: float = 0.5  # DERAC interpolation weight
    beta: float = 0.2  # vanilla-entropy temperature
    entropy_bonus: bool = False  # the "VE" switch
    critic: str = "scalar"
    fzi_mode: str = "vanilla_ce"
    mu_mode: str = "decompose"
    n_atoms: int = 51
    v_min: float | None = None  # None: derive from the environment
    v_max: float | None = None
    n_quantiles: int = 32
    quantile_embedding: int = 16
    huber_kappa: float = 1.0
    lr_critic: float = 3e-4
    lr_actor: float = 3e-4
    adam_eps: float = 1e-8
    batch_size: int = 256
    buffer_capacity: int = 100_000
    learning_starts: int = 10_000
    target_period: int = 1  # T_target for hard syncs
    polyak_tau: float | None = 5e-3  # None selects hard syncs
    hidden: tuple = (64,)
    activation: str = "tanh"
    explore: float = 0.1  # epsilon-greedy rate for value-based agents
    max_episode_len: int = 200

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must lie in [0, 1], got {self.lam}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.critic not in CRITICS:
            raise ValueError(f"critic must be one of {CRITICS}")
        if self.fzi_mode not in FZI_MODES:
            raise ValueError(f"fzi_mode must be one of {FZI_MODES}")
        if self.mu_mode not in ("decompose", "whole"):
            raise ValueError("mu_mode must be 'decompose' or 'whole'")
        if self.huber_kappa <= 0 or self.beta < 0 or self.batch_size < 1 or self.target_period < 1:
            raise ValueError("kappa, beta, batch size and target period must be positive")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def alpha(self) -> float:
        """eps / (1 - eps), the weight of the risk-sensitive cross-entropy term."""
        return self.epsilon / (1.0 - self.epsilon) if self.epsilon < 1.0 else float("inf")

    def replace(self, **changes) -> "AgentConfig":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]
