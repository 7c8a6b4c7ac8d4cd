import pytest

from pulsesoc import protocol
from pulsesoc.cell import CellParams, CellState


@pytest.fixture(scope="session")
def params():
    return CellParams()


@pytest.fixture(scope="session")
def pulse_log(params):
    sched = protocol.build_pulse_train(params)
    log, _ = protocol.execute(sched, params, CellState.rested(params, 0.5))
    return log
