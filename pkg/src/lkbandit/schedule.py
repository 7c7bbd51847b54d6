"""Graph- and time-aware ridge schedule for the GP learners."""
from __future__ import annotations

import numpy as np

LAMBDA_MIN = 1e-6
LAMBDA_MAX = 1e-1
FIRST_EPOCH = 200
REBUILD_THRESHOLD = 0.2


def lambda_schedule(lambda_base: float, s_spec: float, T: int, t: int, clip: bool = True) -> float:
    """``lambda_base * s_spec * T / (T + t)`` clipped to ``[1e-6, 1e-1]``.

    A degenerate spectral scale (edgeless graph, ``s_spec == 0``) falls back
    to ``lambda_base``.
    """
    scale = s_spec if s_spec > 0 else 1.0
    lam = lambda_base * scale * T / (T + t)
    return float(np.clip(lam, LAMBDA_MIN, LAMBDA_MAX)) if clip else float(lam)


def is_epoch_boundary(t: int) -> bool:
    """True at ``t = 200 * 2**k`` for ``k >= 0``."""
    if t < FIRST_EPOCH or t % FIRST_EPOCH:
        return False
    k = t // FIRST_EPOCH
    return k & (k - 1) == 0


def needs_rebuild(current: float, proposed: float) -> bool:
    return abs(proposed - current) > REBUILD_THRESHOLD * current
