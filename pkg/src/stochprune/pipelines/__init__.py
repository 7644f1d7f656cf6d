"""End-to-end pruning pipelines and experiments."""

from .pbp import PbpConfig, pbp
from .pft import PftConfig, pft

__all__ = ["PftConfig", "PbpConfig", "pft", "pbp"]
