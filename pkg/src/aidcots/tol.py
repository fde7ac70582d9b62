"""Line-specific trust-region tolerances from sensitivity magnitudes.

Each tolerance budgets the Taylor term it bounds: the first-order change
is about ||Xi_l|| ||dy_l|| and the second-order one about
0.5 ||S_l|| ||dy_l||^2, with dy_l = y_l when the line is opened.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .netmodel import Network


@dataclass(frozen=True)
class ToleranceConfig:
    alpha1: float = 1.0
    alpha2: float = 1.0
    p: int = 1
    floor_lin: float = 1e-6
    floor_quad: float = 1e-6
    cap_lin: float = np.inf
    cap_quad: float = np.inf

    def __post_init__(self):
        if not (self.alpha1 > 0 and self.alpha2 > 0):
            raise ValueError("alpha1 and alpha2 must be positive")
        if self.p not in (1, 2):
            raise ValueError(f"norm index must be 1 or 2, got {self.p}")
        if self.floor_lin > self.cap_lin or self.floor_quad > self.cap_quad:
            raise ValueError("tolerance floors must not exceed caps")


@dataclass(frozen=True, eq=False)
class ToleranceSet:
    eps_lin: np.ndarray
    eps_quad: np.ndarray
    config: ToleranceConfig = field(default_factory=ToleranceConfig)


def admittance_norm(net: Network, p: int = 1) -> np.ndarray:
    """p-norm of the 2-vector (g_l, b_l) for every line."""
    return np.linalg.norm(np.column_stack([net.g_series, net.b_series]), ord=p, axis=1)


def build_tolerances(first, second, net: Network, cfg: ToleranceConfig | None = None) -> ToleranceSet:
    """Clamp alpha1 ||Xi_l||_p ||y_l||_p and alpha2 0.5 ||S_l||_p ||y_l||_p^2 to [floor, cap]."""
    cfg = cfg or ToleranceConfig()
    y = admittance_norm(net, cfg.p)
    lin = cfg.alpha1 * first.norm(cfg.p) * y
    quad = cfg.alpha2 * 0.5 * second.norm(cfg.p) * y**2
    return ToleranceSet(
        eps_lin=np.clip(lin, cfg.floor_lin, cfg.cap_lin),
        eps_quad=np.clip(quad, cfg.floor_quad, cfg.cap_quad),
        config=cfg,
    )
