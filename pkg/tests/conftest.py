import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import pytest

from mambamir.training import load_train_config, make_datasets, train

DESK_MRI = """
modality = mri
steps = 150
log_every = 150
n_train = 24
n_val = 6
"""


@pytest.fixture(scope="session")
def trained_mri():
    """A briefly trained desk MRI model plus its validation set."""
    cfg = load_train_config(DESK_MRI)
    datasets = make_datasets(cfg)
    result = train(cfg, datasets=datasets)
    return result, datasets[1]


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for num in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[num])
