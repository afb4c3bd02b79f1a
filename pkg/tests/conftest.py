import numpy as np
import pytest

from xlcris.airlink import make_pilot_block, synthesize
from xlcris.msnfce import EstimationResult
from xlcris.scenario import default_config, sample_realization


@pytest.fixture(scope="session")
def small_cfg():
    return default_config().with_(n_ris=64, n_pilots=4, n_slots=16, n_noma_symbols=3)


@pytest.fixture(scope="session")
def small_case(small_cfg):
    real = sample_realization(small_cfg, 11)
    pilots = make_pilot_block(small_cfg, 11)
    rx = synthesize(real, pilots, small_cfg, np.inf, 11)
    return small_cfg, real, pilots, rx


def truth_as_result(real, order=None):
    res = EstimationResult(theta=np.array(real.theta_rm), phi=np.array(real.phi_rm), d=np.array(real.d_rm),
                           tau=np.array(real.tau), rho=np.array(real.rho))
    return res if order is None else res.permuted(order)
