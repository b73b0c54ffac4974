import sys
import warnings
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from uavids import _backend  # noqa: E402
from uavids.ingest import LABEL_COLUMN, infer_schema, synthesize_dataset  # noqa: E402
from uavids.preprocess import apply_recipe, fit_recipe  # noqa: E402

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

IMBALANCED_WEIGHTS = [0.30, 0.20, 0.10, 0.08, 0.08, 0.07, 0.06, 0.05, 0.04, 0.02]


def features_from_spec(spec: dict, seed: int):
    raw, _ = synthesize_dataset(spec, seed)
    schema = infer_schema(raw, exclude=(LABEL_COLUMN,))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return apply_recipe(fit_recipe(raw, schema), raw)


@pytest.fixture(scope="session")
def small_table():
    spec = dict(n_rows=400, n_numeric=6, n_categorical=1, n_classes=3, separability=0.6,
                missing_fraction=0.02)
    return features_from_spec(spec, 3)


@pytest.fixture(scope="session")
def separable_table():
    spec = dict(n_rows=600, n_numeric=8, n_categorical=1, n_classes=4, separability=1.0)
    return features_from_spec(spec, 5)


@pytest.fixture(params=["python", "cython"])
def backend(request):
    if request.param == "cython" and not _backend.has_compiled():
        pytest.skip("compiled extension not built")
    prev = _backend.name()
    _backend.use(request.param)
    yield request.param
    _backend.use(prev)


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record one acceptance verdict; the terminal summary prints them in order."""
    def record(number: int, ok: bool, detail: str):
        ACCEPTANCE[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
