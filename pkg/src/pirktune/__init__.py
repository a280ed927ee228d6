"""pirktune: offline autotuning for parallel explicit ODE solver variants.

From abstract description documents (machine, ODE method, IVP, kernel
templates, implementation skeletons) the package enumerates implementation
variants, generates specialized code, predicts per-variant runtimes with an
analytic cycle model, ranks the variants and selects the near-optimal subset.
"""

__version__ = "0.1.0"
