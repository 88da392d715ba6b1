import time
from types import SimpleNamespace

import numpy as np
import pytest

from ptyroi.clustering import RoiSelector
from ptyroi.recon import epie_reconstruct
from ptyroi.simulator import circular_probe, shepp_logan, simulate_scan
from ptyroi.stats import DiffractionStats

# 256 px phantom, 16 px probe in a 22 px window, 40x40 raster at step 6:
# 39 * 6 + 22 = 256, so the raster spans the phantom exactly
REF = dict(n=256, window=22, diameter=16, grid=(40, 40), step=6, absorption=0.3, phase=0.5)
RECON_ITERS = 200
RECON_SEED = 7

_acceptance_lines = []


def record_acceptance(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title} -- {detail}"
    _acceptance_lines.append((number, line))
    print(line)


@pytest.fixture
def acceptance():
    return record_acceptance


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_acceptance_lines):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def reference_scan():
    phantom = shepp_logan(REF["n"], REF["absorption"], REF["phase"])
    probe = circular_probe(REF["window"], REF["diameter"])
    t0 = time.perf_counter()
    ds = simulate_scan(phantom, probe, *REF["grid"], REF["step"])
    elapsed = time.perf_counter() - t0
    return SimpleNamespace(phantom=phantom, probe=probe, ds=ds, step=REF["step"], simulate_seconds=elapsed)


@pytest.fixture(scope="session")
def reference_stats(reference_scan):
    est = DiffractionStats()
    X = est.fit_transform(reference_scan.ds.patterns)
    return SimpleNamespace(estimator=est, X=X)


@pytest.fixture(scope="session")
def reference_selection(reference_scan, reference_stats):
    ds = reference_scan.ds
    return RoiSelector().fit(reference_stats.X, positions=ds, grid_shape=ds.grid_shape)


@pytest.fixture(scope="session")
def full_recon(reference_scan):
    t0 = time.perf_counter()
    recon = epie_reconstruct(
        reference_scan.ds, reference_scan.probe, RECON_ITERS, step_px=reference_scan.step, seed=RECON_SEED
    )
    return SimpleNamespace(recon=recon, seconds=time.perf_counter() - t0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
