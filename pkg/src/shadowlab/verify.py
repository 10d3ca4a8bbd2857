"""Self-checks of the SDE core: Monte-Carlo marginals and oracle recovery.

Both suites split their work into fixed chunks, each with its own random
stream keyed by ``(seed, suite, chunk)``. Worker threads only change the
scheduling of chunks, so reports are identical for any thread count.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import metrics, sde, synth

MARGINAL_CHUNKS = 16


def _map(fn, items, threads):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


@dataclass
class MarginalRow:
    t: int
    mean: float
    mean_ref: float
    mean_z: float
    var: float
    var_ref: float
    var_z: float
    tolerance: float = 3.0

    @property
    def passed(self):
        return abs(self.mean_z) <= self.tolerance and abs(self.var_z) <= self.tolerance


def marginal_check(seed=0, paths=10_000, theta=1.0, sigma=0.5, steps=100,
                   times=(0.25, 0.5, 1.0), x0=1.0, mu=0.0, threads=1, integrator="exact",
                   reference=None):
    """Iterate forward steps on ``paths`` scalar paths and compare moments.

    Empirical mean and variance at each time in ``times`` (fractions of the
    horizon) are expressed as z-scores against the closed-form marginal:
    the mean's standard error is ``sqrt(var / n)`` and the variance's is
    ``var * sqrt(2 / (n - 1))``.

    ``reference`` picks the integrator of the closed form and defaults to
    ``integrator``. Euler paths measured against the exact marginal carry a
    discretization bias of about half a standard error at ``dt = 1/100``.
    """
    reference = reference or integrator
    sched = sde.SdeSchedule.constant(steps, theta, sigma)
    checkpoints = sorted({int(round(f * steps)) for f in times})
    bounds = np.linspace(0, paths, MARGINAL_CHUNKS + 1).astype(int)

    def run(chunk):
        rng = np.random.default_rng([seed, 0, chunk])
        x = np.full(bounds[chunk + 1] - bounds[chunk], float(x0))
        snaps = {}
        for t in range(steps):
            x = sde.forward_step(x, mu, 1.0, sched, t, rng, integrator)
            if t + 1 in checkpoints:
                snaps[t + 1] = x.copy()
        return snaps

    parts = _map(run, range(MARGINAL_CHUNKS), threads)
    rows = []
    for t in checkpoints:
        x = np.concatenate([p[t] for p in parts])
        n = x.size
        ref_mean, ref_var = sde.closed_form_marginal(x0, mu, 1.0, sched, t, reference)
        ref_mean, ref_var = float(ref_mean), float(ref_var)
        m, v = float(x.mean()), float(x.var(ddof=1))
        rows.append(MarginalRow(
            t=t, mean=m, mean_ref=ref_mean, mean_z=(m - ref_mean) / np.sqrt(ref_var / n),
            var=v, var_ref=ref_var, var_z=(v - ref_var) / (ref_var * np.sqrt(2.0 / (n - 1)))))
    return rows


def recovery_fixture(rng, size=32):
    """Clean field, shadowed target and soft mask for the oracle experiment.

    The mask is zero on part of the field, where the target equals the clean
    field exactly.
    """
    x0 = rng.uniform(0.2, 1.0, size=(size, size))
    mask = synth.toy_template(rng, size)
    mu = x0 * (1.0 - rng.uniform(0.3, 0.7) * mask)
    return x0, mu, mask


@dataclass
class RecoveryRow:
    seed: int
    psnr: float
    zero_gain_error: float


def recovery_check(seed=0, runs=16, size=32, steps=100, polarity="prose", threads=1):
    """Reverse-sample with the oracle score from the noisy start state."""
    sched = sde.SdeSchedule.default(steps)

    def run(k):
        rng = np.random.default_rng([seed, 1, k])
        x0, mu, mask = recovery_fixture(rng, size)
        gain = sde.modulation_field(sde.MaskModulation(mask, polarity))
        x_T = sde.make_start_state(mu, gain, sched, rng)
        score = lambda x, t: sde.oracle_score(x, x0, mu, gain, sched, t)
        x_hat, _ = sde.reverse_sample(x_T, mu, score, gain, sched, rng)
        still = (gain == 0) & (mu == x0)
        err = float(np.abs(x_hat - x0)[still].max()) if still.any() else 0.0
        return RecoveryRow(k, metrics.psnr(np.clip(x_hat, 0, 1), x0), err)

    return _map(run, range(runs), threads)


@dataclass
class VerifyReport:
    seed: int
    marginal: list = field(default_factory=list)
    recovery: list = field(default_factory=list)
    min_psnr: float = 30.0
    max_zero_gain_error: float = 1e-9

    @property
    def mean_psnr(self):
        return float(np.mean([r.psnr for r in self.recovery]))

    @property
    def worst_zero_gain_error(self):
        return max(r.zero_gain_error for r in self.recovery)

    @property
    def recovery_passed(self):
        return (self.mean_psnr >= self.min_psnr
                and self.worst_zero_gain_error < self.max_zero_gain_error)

    @property
    def passed(self):
        return all(r.passed for r in self.marginal) and self.recovery_passed

    def to_text(self):
        lines = [f"verify-sde seed={self.seed}", "", "[marginal]"]
        for r in self.marginal:
            lines.append(
                f"t={r.t:4d} mean={r.mean:.6f} ref={r.mean_ref:.6f} z={r.mean_z:+.3f} "
                f"var={r.var:.6f} ref={r.var_ref:.6f} z={r.var_z:+.3f} "
                f"{'PASS' if r.passed else 'FAIL'}")
        lines += ["", "[recovery]"]
        for r in self.recovery:
            lines.append(f"run={r.seed:3d} psnr={r.psnr:.3f} zero_gain_err={r.zero_gain_error:.3e}")
        lines.append(f"mean_psnr={self.mean_psnr:.3f} (>= {self.min_psnr}) "
                     f"worst_zero_gain_err={self.worst_zero_gain_error:.3e} "
                     f"{'PASS' if self.recovery_passed else 'FAIL'}")
        lines += ["", f"overall {'PASS' if self.passed else 'FAIL'}"]
        return "\n".join(lines) + "\n"


def run_all(seed=0, paths=10_000, runs=16, threads=1):
    return VerifyReport(seed=seed,
                        marginal=marginal_check(seed, paths=paths, threads=threads),
                        recovery=recovery_check(seed, runs=runs, threads=threads))
