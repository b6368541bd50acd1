import numpy as np
import pytest
from hypothesis import settings

from posthoc_ood.datagen import SynthSpec, synth_dataset
from posthoc_ood.fitstats import FitConfig, fit_all

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_data():
    spec = SynthSpec(num_classes=3, feature_dim=6, intrinsic_dim=3, samples_per_class=40,
                     separation=4.0, off_subspace_noise=0.2, ood_shift=6.0, seed=7)
    return synth_dataset(spec)


@pytest.fixture(scope="session")
def small_stats(small_data):
    tr = small_data.train
    return fit_all(tr.features, tr.logits, tr.labels, small_data.head,
                   FitConfig(principal_dim=3))
