"""
State-space machinery: ZOH discretization, recurrence scans and the
selective parameterization.
"""

from .scan import (
    causal_conv,
    combine,
    kernel_conv,
    prefix_parallel,
    prefix_scan,
    prefix_sequential,
    scan_parallel,
    scan_sequential,
)
from .selective import (
    SelectiveProjections,
    SelectiveScan,
    SelectiveSsm,
    selective_forward,
    selective_scan,
)
from .zoh import SsmContinuous, SsmDiscrete, discretize_zoh, zoh_phi, zoh_phi_grad

__all__ = [
    "SsmContinuous",
    "SsmDiscrete",
    "discretize_zoh",
    "zoh_phi",
    "zoh_phi_grad",
    "combine",
    "prefix_parallel",
    "prefix_sequential",
    "prefix_scan",
    "scan_sequential",
    "scan_parallel",
    "kernel_conv",
    "causal_conv",
    "SelectiveScan",
    "SelectiveProjections",
    "SelectiveSsm",
    "selective_scan",
    "selective_forward",
]
