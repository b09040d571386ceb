"""xtalkit: molecular-crystal data machinery.

Periodic geometry kernels, CIF-subset ingestion, shell-based training crops,
structure losses, a closed-form diffusion sampling testbed, CSP evaluation
metrics, and a boundary-scaling experiment lab, tied together by a CLI.
"""

__version__ = "0.1.0"
