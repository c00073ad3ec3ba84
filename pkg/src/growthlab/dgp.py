"""Two-frequency growth process: persistent Gaussian state plus fat-tailed noise.

Observed log growth is the sum of a latent Gaussian AR(1) component and a
transitory Student-t shock.  The Student tail parameter ``nu`` controls how
extreme the transitory shocks can be; ``nu = inf`` recovers the Gaussian
benchmark.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .errors import InvalidParameterError

BURN_IN = 100


@dataclass(frozen=True)
class ModelParams:
    """Parameters of the growth process and of the forecasting environment.

    Parameters
    ----------
    phi : float
        Persistence of the latent state, |phi| < 1.
    g_bar : float
        Unconditional mean of log growth (per period).
    nu : float
        Student-t degrees of freedom of the transitory shock; must exceed 1.
        ``math.inf`` selects a standard Normal transitory shock.
    sigma_u : float
        Scale of the latent-state innovation (Normal).
    sigma_eps : float
        Scale of the transitory shock (Student-t).
    ar_order : int
        Number of lags the linear forecaster uses.
    discount_rate : float
        Per-period discount rate used by the pricing layer.
    """

    phi: float = 0.9
    g_bar: float = 0.0
    nu: float = math.inf
    sigma_u: float = 1.0
    sigma_eps: float = 1.0
    ar_order: int = 2
    discount_rate: float = 0.05

    def __post_init__(self):
        if not abs(self.phi) < 1:
            raise InvalidParameterError(f"phi must satisfy |phi| < 1, got {self.phi}")
        if not (self.nu > 1):
            raise InvalidParameterError(f"nu must exceed 1 (or be inf), got {self.nu}")
        if self.sigma_u <= 0 or self.sigma_eps < 0:
            raise InvalidParameterError("sigma_u must be > 0 and sigma_eps >= 0")
        if self.ar_order < 1:
            raise InvalidParameterError(f"ar_order must be >= 1, got {self.ar_order}")
        if self.discount_rate <= 0:
            raise InvalidParameterError("discount_rate must be > 0")

    def check_pricing_convergence(self):
        """Raise unless the perpetuity sum converges at the true mean growth."""
        if math.exp(self.g_bar) >= 1.0 + self.discount_rate:
            raise InvalidParameterError(
                "pricing requires exp(g_bar) < 1 + discount_rate "
                f"(g_bar={self.g_bar}, r={self.discount_rate})"
            )


@dataclass
class GrowthPath:
    """One simulated series of observed growth and its two components.

    ``g[t] = latent[t] + eps[t]`` holds exactly at every index.
    """

    g: np.ndarray
    latent: np.ndarray
    eps: np.ndarray
    seed: int

    def __len__(self) -> int:
        return len(self.g)


@dataclass
class GrowthPanel:
    """Cross-section of independent growth paths sharing one parameter set."""

    firms: dict[int, GrowthPath] = field(default_factory=dict)
    params: ModelParams = field(default_factory=ModelParams)

    @property
    def n_firms(self) -> int:
        return len(self.firms)


def sample_student_t(nu, scale, rng, size=None):
    """Draw from a Student-t(0, scale, nu); Normal(0, scale) when nu is inf.

    Parameters
    ----------
    nu : float
        Degrees of freedom, > 1, or ``math.inf`` for the Normal limit.
    scale : float
        Scale parameter, > 0.
    rng : numpy.random.Generator
        Source of randomness; output is deterministic given its state.
    size : int or tuple, optional
        Shape of the draw; a scalar is returned when omitted.
    """
    if not (nu > 1):
        raise InvalidParameterError(f"nu must exceed 1 (mean undefined), got {nu}")
    if scale <= 0:
        raise InvalidParameterError(f"scale must be > 0, got {scale}")
    if math.isinf(nu):
        return rng.standard_normal(size) * scale
    return rng.standard_t(nu, size) * scale


def firm_seed(master_seed: int, firm: int) -> int:
    """Deterministic per-firm seed, independent of firm iteration order."""
    ss = np.random.SeedSequence([int(master_seed), int(firm)])
    return int(ss.generate_state(1, np.uint64)[0])


def simulate_path(params: ModelParams, T: int, seed: int) -> GrowthPath:
    """Simulate ``T`` periods of growth after discarding a burn-in.

    The latent state starts at its stationary distribution and an extra
    ``BURN_IN`` periods are dropped, so every retained observation is drawn
    from the stationary law of the process.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    rng = np.random.default_rng(seed)
    total = T + BURN_IN

    sigma_latent = params.sigma_u / math.sqrt(1.0 - params.phi**2)
    u = rng.standard_normal(total) * params.sigma_u
    if params.sigma_eps > 0:
        eps = sample_student_t(params.nu, params.sigma_eps, rng, total)
    else:
        eps = np.zeros(total)

    # Deviations x_t = phi * x_{t-1} + u_t with x_0 drawn from the
    # stationary law; the recursion is an IIR filter over the innovations.
    x0 = sigma_latent * (u[0] / params.sigma_u)
    x_rest, _ = lfilter([1.0], [1.0, -params.phi], u[1:], zi=[params.phi * x0])
    latent = params.g_bar + np.concatenate(([x0], x_rest))

    latent = latent[BURN_IN:]
    eps = eps[BURN_IN:]
    return GrowthPath(g=latent + eps, latent=latent, eps=eps, seed=int(seed))


def simulate_panel(
    params: ModelParams, n_firms: int, T: int, master_seed: int
) -> GrowthPanel:
    """Simulate ``n_firms`` independent paths with per-firm seeded streams.

    Firm ``i`` is seeded from ``(master_seed, i)``, so the panel does not
    depend on the order in which firms are generated.
    """
    if n_firms < 1:
        raise ValueError(f"n_firms must be >= 1, got {n_firms}")
    firms = {
        i: simulate_path(params, T, firm_seed(master_seed, i))
        for i in range(n_firms)
    }
    return GrowthPanel(firms=firms, params=params)
