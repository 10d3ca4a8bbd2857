"""Mask-modulated mean-reverting SDE.

Forward process, per element::

    dx = theta_t (mu - x) dt + sigma_t * g * dw

where ``g`` is the modulation field derived from the soft shadow mask. The
reverse-time process is::

    dx = [theta_t (mu - x) - sigma_t^2 g^2 score] dt + sigma_t * g * dw_bar

Time is discrete: state ``x_t`` lives at step ``t`` in ``0..T`` and step
``s`` (coefficients ``theta[s]``, ``sigma[s]``) carries ``x_s`` to
``x_{s+1}``. All functions work elementwise on numpy arrays of any shape and
draw their noise from an explicit ``numpy.random.Generator``.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidInputError, NumericalDivergenceError

DEFAULT_STEPS = 100
DEFAULT_NOISE_LEVEL = 50.0 / 255.0
POLARITIES = ("prose", "literal")


@dataclass(frozen=True, eq=False)
class SdeSchedule:
    """Per-step reversion rates and volatilities.

    Parameters
    ----------
    theta, sigma : array of shape (T,)
    dt : float
        Step size; the horizon is ``T * dt``.
    terminal_noise_level : float
        Standard deviation of the noise injected into the start state of the
        reverse process, in unit intensities.
    """

    theta: np.ndarray
    sigma: np.ndarray
    dt: float
    terminal_noise_level: float = DEFAULT_NOISE_LEVEL

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        sigma = np.asarray(self.sigma, dtype=np.float64).reshape(-1)
        if theta.shape != sigma.shape or theta.size == 0:
            raise InvalidInputError("theta and sigma must be non-empty arrays of equal length")
        if np.any(theta < 0) or np.any(sigma < 0) or not np.all(np.isfinite(theta + sigma)):
            raise InvalidInputError("theta and sigma must be finite and non-negative")
        if not self.dt > 0:
            raise InvalidInputError(f"dt must be > 0, got {self.dt}")
        if self.terminal_noise_level < 0:
            raise InvalidInputError("terminal_noise_level must be >= 0")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "sigma", sigma)

    @property
    def steps(self):
        return self.theta.size

    @classmethod
    def constant(cls, steps, theta, sigma, dt=None, terminal_noise_level=DEFAULT_NOISE_LEVEL):
        dt = 1.0 / steps if dt is None else dt
        return cls(np.full(steps, float(theta)), np.full(steps, float(sigma)), dt,
                   terminal_noise_level)

    @classmethod
    def default(cls, steps=DEFAULT_STEPS, noise_level=DEFAULT_NOISE_LEVEL, total_reversion=4.0):
        """Constant schedule whose terminal marginal std equals ``noise_level``.

        ``theta`` is constant with ``sum(theta) * dt == total_reversion``;
        ``sigma`` is solved from the exact variance recursion started at 0.
        """
        dt = 1.0 / steps
        theta = total_reversion / (steps * dt)
        sigma = noise_level * np.sqrt(2.0 * theta / -np.expm1(-2.0 * total_reversion))
        return cls.constant(steps, theta, sigma, dt, noise_level)


@dataclass(frozen=True, eq=False)
class MaskModulation:
    """Soft mask plus the polarity used to turn it into a noise gain.

    ``"prose"`` injects noise where the mask is large (in the shadow);
    ``"literal"`` uses ``1 - mask``.
    """

    mask: np.ndarray
    polarity: str = "prose"

    def __post_init__(self):
        if self.polarity not in POLARITIES:
            raise InvalidInputError(f"polarity must be one of {POLARITIES}, got {self.polarity!r}")
        mask = np.asarray(self.mask, dtype=np.float64)
        if mask.size and (mask.min() < 0.0 or mask.max() > 1.0 or not np.all(np.isfinite(mask))):
            raise InvalidInputError("mask values must lie in [0, 1]")
        object.__setattr__(self, "mask", mask)


def modulation_field(mod):
    """Per-element noise gain in ``[0, 1]``."""
    if mod.polarity == "literal":
        return 1.0 - mod.mask
    return mod.mask.copy()


def _gain(mod):
    if isinstance(mod, MaskModulation):
        return modulation_field(mod)
    return np.asarray(mod, dtype=np.float64)


def _check_broadcast(x, other, name):
    try:
        ok = np.broadcast_shapes(x.shape, np.shape(other)) == x.shape
    except ValueError:
        ok = False
    if not ok:
        raise InvalidInputError(f"{name} of shape {np.shape(other)} does not match state "
                                f"shape {x.shape}")


def _check_step(sched, t, lo, hi):
    if not lo <= t <= hi:
        raise InvalidInputError(f"step index {t} outside [{lo}, {hi}] for T={sched.steps}")


def marginal_table(sched, integrator="exact"):
    """Decay ``exp(-Theta_t)`` and unit-gain variance for every ``t`` in ``0..T``.

    ``integrator="exact"`` gives the moments of the continuous process with
    piecewise-constant coefficients; ``"euler"`` the exact moments of the
    Euler-Maruyama chain.
    """
    theta, sigma, dt = sched.theta, sched.sigma, sched.dt
    T = sched.steps
    decay = np.empty(T + 1)
    var = np.empty(T + 1)
    decay[0], var[0] = 1.0, 0.0
    for s in range(T):
        if integrator == "exact":
            a = np.exp(-theta[s] * dt)
            if theta[s] > 0:
                inc = sigma[s] ** 2 * -np.expm1(-2.0 * theta[s] * dt) / (2.0 * theta[s])
            else:
                inc = sigma[s] ** 2 * dt
        elif integrator == "euler":
            a = 1.0 - theta[s] * dt
            inc = sigma[s] ** 2 * dt
        else:
            raise InvalidInputError(f"unknown integrator {integrator!r}")
        decay[s + 1] = decay[s] * a
        var[s + 1] = var[s] * a * a + inc
    return decay, var


def closed_form_marginal(x0, mu, mod, sched, t, integrator="exact"):
    """Mean and variance fields of ``x_t`` given ``x_0 = x0``."""
    _check_step(sched, t, 0, sched.steps)
    x0 = np.asarray(x0, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    g = _gain(mod)
    decay, var = marginal_table(sched, integrator)
    mean = mu + (x0 - mu) * decay[t]
    variance = np.broadcast_to(g * g * var[t], np.broadcast_shapes(mean.shape, g.shape))
    return mean, np.array(variance)


def forward_step(x, mu, mod, sched, t, rng, integrator="euler"):
    """Advance ``x_t`` to ``x_{t+1}``."""
    _check_step(sched, t, 0, sched.steps - 1)
    x = np.asarray(x, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    g = _gain(mod)
    _check_broadcast(x, mu, "mu")
    _check_broadcast(x, g, "modulation")
    th, sg, dt = sched.theta[t], sched.sigma[t], sched.dt
    xi = rng.standard_normal(x.shape)
    if integrator == "euler":
        return x + th * (mu - x) * dt + sg * g * np.sqrt(dt) * xi
    if integrator == "exact":
        a = np.exp(-th * dt)
        std = sg * np.sqrt(-np.expm1(-2.0 * th * dt) / (2.0 * th)) if th > 0 else sg * np.sqrt(dt)
        return mu + (x - mu) * a + std * g * xi
    raise InvalidInputError(f"unknown integrator {integrator!r}")


def make_start_state(inp, mod, sched, rng):
    """``x_T = inp + noise_level * g * xi``; unmodulated elements stay exact."""
    inp = np.asarray(inp, dtype=np.float64)
    g = _gain(mod)
    xi = rng.standard_normal(inp.shape)
    return inp + sched.terminal_noise_level * g * xi


def oracle_score(x_t, x0, mu, mod, sched, t):
    """Exact Gaussian score of the closed-form marginal; 0 where variance is 0."""
    mean, var = closed_form_marginal(x0, mu, mod, sched, t)
    x_t = np.asarray(x_t, dtype=np.float64)
    pos = var > 0
    return np.where(pos, -(x_t - mean) / np.where(pos, var, 1.0), 0.0)


def reverse_step(x, mu, score, mod, sched, t, rng, deterministic=False, add_noise=True):
    """Carry ``x_t`` back to ``x_{t-1}`` with the reverse-time SDE.

    ``deterministic=True`` gives the probability-flow update (half the score
    coefficient, no noise). ``add_noise=False`` drops only the noise term.
    """
    _check_step(sched, t, 1, sched.steps)
    x = np.asarray(x, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    score = np.asarray(score, dtype=np.float64)
    g = _gain(mod)
    for name, arr in (("mu", mu), ("score", score), ("modulation", g)):
        _check_broadcast(x, arr, name)
    s = t - 1
    th, sg, dt = sched.theta[s], sched.sigma[s], sched.dt
    coef = 0.5 if deterministic else 1.0
    drift = th * (mu - x) - coef * sg * sg * g * g * score
    out = x - drift * dt
    if add_noise and not deterministic:
        out = out + sg * g * np.sqrt(dt) * rng.standard_normal(x.shape)
    return out


def reverse_sample(x_T, mu, score_provider, mod, sched, rng, deterministic=False,
                   final_noise=False):
    """Run the reverse process from step ``T`` down to 0.

    ``score_provider(x, t)`` returns the score field at step ``t``. The last
    update (``t = 1``) is noise-free unless ``final_noise`` is set.

    Returns
    -------
    x0 : ndarray
    norms : ndarray of shape (T + 1,)
        Euclidean norm of the state, from ``x_T`` (index 0) to ``x_0``.
    """
    x = np.asarray(x_T, dtype=np.float64).copy()
    g = _gain(mod)
    norms = [float(np.linalg.norm(x))]
    for t in range(sched.steps, 0, -1):
        score = score_provider(x, t)
        x = reverse_step(x, mu, score, g, sched, t, rng, deterministic=deterministic,
                         add_noise=final_noise or t > 1)
        if not np.all(np.isfinite(x)):
            raise NumericalDivergenceError(f"non-finite state at reverse step t={t}", step=t)
        norms.append(float(np.linalg.norm(x)))
    return x, np.array(norms)
