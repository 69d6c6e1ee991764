"""Dense information prompts: low-rank prompt tuning with information-density diagnostics."""

from .linalg import SvdResult, matmul, numerical_rank, singular_value_gradient, svd_thin
from .metrics import harmonic_mean, id_gradient, information_density, spearman
from .prompt import (DipPrompt, FullRankPrompt, effective_prompt, init_dip, merge, param_count_dip,
                     param_count_full)
from .train import TrainConfig, run_ablation, run_base_to_new, run_fewshot

__version__ = "0.1.0"
