"""Root-cause-analysis lab.

Synthetic SCM episode generation, an amortised attention-based root-cause
ranker with its own reverse-mode tensor engine, classical RCA baselines,
an exact enumeration oracle for small discrete causal models, and an
evaluation harness with paired-episode metrics.
"""

__version__ = "0.1.0"

from .rng import substream

__all__ = ["substream", "__version__"]
