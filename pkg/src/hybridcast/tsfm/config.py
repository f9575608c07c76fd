"""Model configuration."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import ConfigError

CALENDAR_DIM = 4
N_FREQ_CLASSES = 6


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and optimizer constants.

    Desk-scale defaults train on CPU in minutes; the full-scale configuration
    remains expressible through the same fields.
    """

    n_layers: int = 2
    d_model: int = 64
    n_heads: int = 4
    n_experts: int = 4
    top_k_experts: int = 2
    patch_lengths: tuple[int, ...] = (8, 16)
    context_patches: int = 8
    d_ff: int | None = None
    learning_rate: float = 1e-2
    batch_size: int = 16
    aux_balance_coef: float = 0.0
    use_positional_embedding: bool = False
    # sampling frequency -> patch length; unset classes fall back to the
    # shortest patch, minute/hour to the longest
    freq_patch_map: dict[str, int] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ConfigError("d_model must be divisible by n_heads")
        if not self.patch_lengths:
            raise ConfigError("patch_lengths must be non-empty")
        if not 1 <= self.top_k_experts <= self.n_experts:
            raise ConfigError("top_k_experts must be in [1, n_experts]")
        if any(p < 1 for p in self.patch_lengths):
            raise ConfigError("patch lengths must be positive")
        if self.context_patches < 2:
            raise ConfigError("context_patches must be >= 2 (next-patch training needs two)")
        object.__setattr__(self, "patch_lengths", tuple(sorted(set(self.patch_lengths))))
        for cls, p in self.freq_patch_map.items():
            if p not in self.patch_lengths:
                raise ConfigError(f"freq_patch_map[{cls!r}]={p} is not a configured patch length")

    @property
    def ff_dim(self) -> int:
        return self.d_ff if self.d_ff is not None else 2 * self.d_model

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def patch_len_for(self, freq_class: str) -> int:
        if freq_class in self.freq_patch_map:
            return self.freq_patch_map[freq_class]
        if freq_class in ("minute", "hour"):
            return max(self.patch_lengths)
        return min(self.patch_lengths)

    def to_dict(self) -> dict:
        return {
            "n_layers": self.n_layers, "d_model": self.d_model,
            "n_heads": self.n_heads, "n_experts": self.n_experts,
            "top_k_experts": self.top_k_experts,
            "patch_lengths": list(self.patch_lengths),
            "context_patches": self.context_patches, "d_ff": self.d_ff,
            "learning_rate": self.learning_rate, "batch_size": self.batch_size,
            "aux_balance_coef": self.aux_balance_coef,
            "use_positional_embedding": self.use_positional_embedding,
            "freq_patch_map": dict(self.freq_patch_map), "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        allowed = set(cls.__dataclass_fields__)
        unknown = set(data) - allowed
        if unknown:
            raise ConfigError(f"unknown model config keys {sorted(unknown)}")
        data = dict(data)
        if "patch_lengths" in data:
            data["patch_lengths"] = tuple(data["patch_lengths"])
        return cls(**data)
