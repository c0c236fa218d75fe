"""Similarity constrained alignment for unsupervised domain adaptation.

Joint optimization of a source cross-entropy loss, a linear-time JMMD
alignment loss and a batch-all triplet loss over pseudo-labeled target
samples, on a small numpy MLP with hand-written gradients.
"""

from sca.errors import ConfigError, ContractError, SamplingUnavailable

__version__ = "0.1.0"

__all__ = ["ConfigError", "ContractError", "SamplingUnavailable", "__version__"]
