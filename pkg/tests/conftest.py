import numpy as np
import pytest

from nvlab import apparatus as ap
from nvlab import config as cfg
from nvlab import pulses as pl


@pytest.fixture()
def acceptance_apparatus():
    return ap.Apparatus(ap.sample_acceptance(), backend=pl.pulseblaster(),
                        detector=ap.DetectorProfile(channels=2, splitter=True),
                        seed=42)


@pytest.fixture()
def session(acceptance_apparatus):
    ses = acceptance_apparatus.session()
    yield ses
    ses.close()


@pytest.fixture()
def default_cal():
    return pl.DelayCalibration.default()


def rabi_drive_setup(session, site_index=0, rabi=13.16e6, preset="odmr_28g",
                     position=(100.0, 100.0, 5.0)):
    """Common boilerplate: move to a site, set a field preset and put the
    carrier on the centroid of the minus-branch lines."""
    from nvlab import spin

    session.move_stage(list(position))
    session.set_magnet_preset(preset)
    site = session.apparatus.sample.sites[site_index]
    params = session.apparatus.spin_params_for(site)
    table = spin.transition_frequencies(params)
    lines = list(table.lines_minus.values())
    center = float(np.mean(lines))
    session.set_laser(270.0, "pattern")
    session.set_mw(frequency=center, rabi_frequency=rabi, mode="pattern")
    return params, table, center
