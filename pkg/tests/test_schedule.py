import numpy as np
import pytest

from lkbandit.schedule import is_epoch_boundary, lambda_schedule, needs_rebuild


def test_t_zero():
    assert lambda_schedule(0.05, 0.5, 1000, 0) == pytest.approx(0.025)
    assert lambda_schedule(5.0, 1.0, 1000, 0) == 0.1
    assert lambda_schedule(1e-9, 1.0, 1000, 0) == 1e-6


def test_t_equals_T_halves():
    assert lambda_schedule(0.05, 0.7, 500, 500, clip=False) == pytest.approx(0.5 * 0.05 * 0.7)


def test_arithmetic_example():
    assert lambda_schedule(0.05, 1 / 3, 3000, 600) == pytest.approx(0.0138888888888889, rel=1e-12)


def test_degenerate_scale_falls_back():
    assert lambda_schedule(0.05, 0.0, 100, 0) == pytest.approx(0.05)


def test_epochs():
    hits = [t for t in range(1, 10000) if is_epoch_boundary(t)]
    assert hits == [200, 400, 800, 1600, 3200, 6400]


def test_rebuild_threshold():
    assert not needs_rebuild(1.0, 0.81)
    assert needs_rebuild(1.0, 0.79)
    assert needs_rebuild(1.0, 1.21)
    assert not needs_rebuild(1.0, 1.0)


def test_value_changes_only_at_epochs():
    # Applied value as a function of t with the rebuild threshold.
    applied, out = lambda_schedule(0.05, 1.0, 3000, 0), []
    for t in range(1, 3001):
        if is_epoch_boundary(t):
            prop = lambda_schedule(0.05, 1.0, 3000, t)
            if needs_rebuild(applied, prop):
                applied = prop
        out.append(applied)
    changes = [t + 1 for t in range(1, 3000) if out[t] != out[t - 1]]
    assert set(changes) <= {200, 400, 800, 1600}
    assert np.all(np.diff(out) <= 0)
