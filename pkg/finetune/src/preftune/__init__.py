"""preftune: preference-optimization smoke trainer.

Trains low-rank adapters on a tiny byte-level language model with the DPO
objective, consuming the preference-pair JSONL interchange format emitted
by the data factory. The point is end-to-end dataset validation at desk
scale, not model quality.
"""

__version__ = "0.1.0"

from preftune.loss import dpo_loss
from preftune.train import TrainConfig, smoke_eval, train

__all__ = ["TrainConfig", "dpo_loss", "smoke_eval", "train", "__version__"]
