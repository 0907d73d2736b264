import sys

import pytest

from cogload.data import Condition
from cogload.nn import TrainSpec
from cogload.protocols import pretrain_wesad, run_pretrained_protocol, run_vanilla
from cogload.synthetic import make_pilot_dataset, make_wesad_dataset


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Print the acceptance verdict lines after the run, outside capture."""
    for name, module in sys.modules.items():
        if name.rpartition(".")[2] != "test_acceptance":
            continue
        verdicts = getattr(module, "VERDICTS", None)
        if verdicts:
            terminalreporter.section("acceptance criteria")
            for line in verdicts:
                terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def pilot4():
    """Four synthetic pilot subjects, 45 s per condition (fast, separable)."""
    return make_pilot_dataset(n_subjects=4, duration_s=45.0, master_seed=11)


@pytest.fixture(scope="session")
def wesad4():
    durations = {
        Condition.WESAD_BASELINE: 45.0,
        Condition.STRESS: 40.0,
        Condition.AMUSEMENT: 30.0,
    }
    return make_wesad_dataset(n_subjects=4, master_seed=7, durations_s=durations)


@pytest.fixture(scope="session")
def fast_spec():
    return TrainSpec(max_epochs=6, patience_epochs=3, batch_size=64)


@pytest.fixture(scope="session")
def vanilla_smoke(pilot4, fast_spec):
    """One vanilla run at 10 s windows, shared by protocol and analysis tests."""
    metrics, pool = run_vanilla(pilot4, 10.0, 1, fast_spec, master_seed=5)
    return metrics, pool


@pytest.fixture(scope="session")
def hf_model(vanilla_smoke):
    """A detector trained on the synthetic high-frequency-content classes."""
    _, pool = vanilla_smoke
    return pool.entries[0].get_weights()


@pytest.fixture(scope="session")
def stress_pool_smoke(wesad4, fast_spec):
    """Two pretraining runs over the synthetic WESAD-like subjects."""
    return pretrain_wesad(wesad4, 10.0, 2, fast_spec, master_seed=5)


@pytest.fixture(scope="session")
def pretrained_smoke(pilot4, stress_pool_smoke, fast_spec):
    """Fine-tune the cached stress sources over every pilot fold (2 runs x 4)."""
    metrics, pool, stress = run_pretrained_protocol(
        pilot4,
        None,
        10.0,
        2,
        finetune_spec=fast_spec,
        master_seed=5,
        stress_pool=stress_pool_smoke,
    )
    return metrics, pool, stress
