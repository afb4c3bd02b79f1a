"""Wideband near-field channel estimation for a circular RIS.

Modules: ``scenario`` (configuration, seeding, channel draws), ``channel``
(array responses and cascade channel), ``airlink`` (pilots and received
tensor), ``msnfce`` (multi-stage estimator), ``crb`` (Fisher information),
``baseline`` (on-grid SOMP) and ``bench`` (Monte Carlo runner).
"""

import logging

from .airlink import make_pilot_block, synthesize
from .baseline import somp_estimate
from .crb import fim
from .msnfce import EstimationResult, MsnfceOptions, estimate, reconstruct_cascade
from .scenario import SystemConfig, default_config, load_config, sample_realization

logging.getLogger(__name__).addHandler(logging.NullHandler())

__all__ = [
    "EstimationResult", "MsnfceOptions", "SystemConfig", "default_config", "estimate", "fim",
    "load_config", "make_pilot_block", "reconstruct_cascade", "sample_realization", "somp_estimate",
    "synthesize",
]
