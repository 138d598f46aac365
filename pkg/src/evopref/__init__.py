"""evopref: heuristic-search data factory and preference-pair dataset builder.

The pipeline has three stages: an LLM-driven search evolves candidate
heuristics for a combinatorial task (evaluated in a process sandbox), every
evaluated candidate lands in a deduplicated fitness-ranked database, and the
database is then sampled into (prompt, chosen, rejected) preference pairs for
preference-optimization training.
"""

__version__ = "0.1.0"

from evopref.db import AlgorithmRecord, AlgorithmStore
from evopref.sampler import PreferencePair, RankPartition, SamplerConfig

__all__ = [
    "AlgorithmRecord",
    "AlgorithmStore",
    "PreferencePair",
    "RankPartition",
    "SamplerConfig",
    "__version__",
]
