import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from skelscreen import kernels

settings.register_profile("default", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

BACKENDS = ["numpy"] + (["numba"] if kernels.HAVE_NUMBA else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    return kernels.get_backend(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_phantom():
    from skelscreen.phantom import PhantomSpec, Pose, generate

    return generate(PhantomSpec(seed=3, pose=Pose()))


def truth_labeled_bones(vol, truth):
    """Per fetus: LabeledBone lists carrying generator truth labels."""
    from skelscreen import pipeline
    from skelscreen.config import PipelineConfig
    from skelscreen.phantom import truth_label_index

    bones = pipeline.localize_scan(vol, PipelineConfig())
    matched = pipeline.match_truth(bones, truth.labels)
    name = truth.label_of()
    out = []
    for f in pipeline.featurize_scan(bones, vol.spacing_mm):
        labels = [truth_label_index(name[matched[i]]) for i in f.bone_ids]
        out.append(pipeline.labeled_bones(f, labels, None))
    return out


@pytest.fixture(scope="session")
def truth_labeled(small_phantom):
    return truth_labeled_bones(*small_phantom)


ACCEPTANCE = {}


def record_acceptance(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
