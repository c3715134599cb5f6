"""Operation audits, closed-form sizes, sweeps, merge experiments and timings.

Submodules: ``audit``, ``formulas``, ``data``, ``sweep``, ``merge``,
``timing`` and ``plots``.
"""

from ..metrics import OPS, OpCounters, counting

__all__ = ["OPS", "OpCounters", "counting"]
