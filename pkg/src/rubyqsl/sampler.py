"""Metropolis sampling of |psi|^2 over restricted configurations.

The proposal resamples one uniformly chosen triangle to one of its four
local states (possibly the current one), which is ergodic on the restricted
space and needs no constraint repair.  Chains run in lockstep as one
vectorized walker array; a fixed seed gives a bit-identical sample stream.

Estimators average over chains: the quoted standard error is the spread of
per-chain means (chains are independent, so this is blocking at the
coarsest level), and an integrated autocorrelation time is estimated from
the ratio of between-chain to pooled variance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import state as st
from .lattice import RubyLattice


@dataclass(frozen=True)
class Estimate:
    mean: complex
    stderr: float
    n_samples: int
    n_chains: int
    tau: float

    def __str__(self):
        return f"{self.mean:.6g} +- {self.stderr:.2g} (tau~{self.tau:.1f})"


@dataclass
class ChainState:
    """One walker: configuration plus its cached log |psi|^2."""

    config: np.ndarray
    log_weight: float
    stream: int


@dataclass
class SampleSet:
    """(n_chains, n_samples, N) configurations with cached log-amplitudes."""

    configs: np.ndarray
    log_psi: np.ndarray
    acceptance: float
    final: np.ndarray  # (n_chains, N) last walker positions, for warm restarts

    @property
    def n_chains(self) -> int:
        return self.configs.shape[0]

    @property
    def n_samples(self) -> int:
        return self.configs.shape[1]

    def flat(self) -> tuple[np.ndarray, np.ndarray]:
        k, m, n = self.configs.shape
        return self.configs.reshape(k * m, n), self.log_psi.reshape(k * m)


def run_mcmc(model, p, n_chains: int, n_samples: int, n_burnin: int,
             seed=None, thin: int = 1, init: np.ndarray | None = None,
             rng: np.random.Generator | None = None) -> SampleSet:
    """Sample |psi|^2; ``n_burnin`` and ``thin`` are counted in sweeps
    (one sweep = one proposal per triangle on average).

    ``init`` (n_chains, N) warm-starts the walkers, e.g. from the previous
    parameter set along a trajectory.
    """
    if n_chains < 1 or n_samples < 1:
        raise ValueError("need at least one chain and one sample")
    lat: RubyLattice = model.lat
    if rng is None:
        rng = np.random.default_rng(seed)
    t_count = lat.n_triangles

    if init is None:
        configs = st.random_restricted_configs(lat, n_chains, rng)
    else:
        configs = np.array(init, dtype=np.int8).reshape(n_chains, lat.n_sites)
    log_psi = model.log_amplitude(p, configs)
    if not np.isfinite(log_psi).all():
        raise ValueError("sampler started at a non-finite log-amplitude; "
                         "choose a start inside the state's support")

    out_configs = np.empty((n_chains, n_samples, lat.n_sites), dtype=np.int8)
    out_logs = np.empty((n_chains, n_samples), dtype=complex)
    accepted = 0
    proposed = 0
    rows = np.arange(n_chains)

    def sweep():
        nonlocal configs, log_psi, accepted, proposed
        for _ in range(t_count):
            tri_idx = rng.integers(0, t_count, size=n_chains)
            new_state = rng.integers(0, 4, size=n_chains).astype(np.int8)
            proposal = configs.copy()
            tri_sites = lat.triangles[tri_idx]  # (K, 3)
            proposal[rows[:, None], tri_sites] = 0
            for j in range(3):
                sel = new_state == j + 1
                proposal[rows[sel], tri_sites[sel, j]] = 1
            log_new = model.log_amplitude(p, proposal)
            # min(1, |psi'/psi|^2) in log space; -inf proposals always reject
            log_ratio = 2.0 * (log_new.real - log_psi.real)
            u = rng.random(n_chains)
            accept = np.log(u) < log_ratio
            configs[accept] = proposal[accept]
            log_psi[accept] = log_new[accept]
            accepted += int(accept.sum())
            proposed += n_chains

    for _ in range(n_burnin):
        sweep()
    for s in range(n_samples):
        for _ in range(thin):
            sweep()
        out_configs[:, s] = configs
        out_logs[:, s] = log_psi

    if np.isnan(out_logs).any():
        raise ValueError("non-finite log-amplitude encountered while sampling")
    rate = accepted / proposed if proposed else 1.0
    return SampleSet(out_configs, out_logs, rate, configs.copy())


def estimate_local(values: np.ndarray) -> Estimate:
    """Mean and error of a local-operator sample array shaped (chains, samples)."""
    values = np.asarray(values)
    if values.size == 0:
        raise ValueError("empty sample set")
    values = np.atleast_2d(values)
    k, m = values.shape
    chain_means = values.mean(axis=1)
    mean = chain_means.mean()
    # std of a complex array is sqrt(var(re) + var(im)), which is what the
    # quoted error bar should combine
    if k > 1:
        between = float(chain_means.std(ddof=1)) ** 2
        stderr = float(np.sqrt(between / k))
    else:
        stderr = float(values.std()) / np.sqrt(m)
    pooled = float(values.std()) ** 2
    if k > 1 and pooled > 0:
        tau = max(1.0, m * between / pooled)
    else:
        tau = 1.0
    return Estimate(mean=complex(mean), stderr=stderr,
                    n_samples=k * m, n_chains=k, tau=tau)


def bootstrap_ci(values: np.ndarray, n_boot: int = 1024,
                 seed=None) -> tuple[float, float]:
    """Nonparametric bootstrap (mean, stderr) over per-chain means.

    A 2-D input is read as (chains, samples); a flat array treats every
    entry as its own chain mean.
    """
    values = np.asarray(values)
    if values.ndim == 1:
        values = values[:, None]
    chain_means = values.mean(axis=1).real
    if len(chain_means) < 2:
        raise ValueError("bootstrap needs at least two chains")
    rng = np.random.default_rng(seed)
    k = len(chain_means)
    idx = rng.integers(0, k, size=(n_boot, k))
    means = chain_means[idx].mean(axis=1)
    return float(chain_means.mean()), float(means.std(ddof=0))


# -- two-replica swap estimator -------------------------------------------------


def swap_ratios(model, p, region, configs_a: np.ndarray, log_a: np.ndarray,
                configs_b: np.ndarray, log_b: np.ndarray) -> np.ndarray:
    """Per-pair swap estimator values for the second Renyi entropy.

    Regions are site index sets.  Swapped configurations that violate the
    blockade constraint lie outside the state space and contribute exactly
    zero (the wave function has no amplitude there).
    """
    region = np.asarray(sorted(set(int(s) for s in region)), dtype=np.int64)
    n = model.lat.n_sites
    if len(region) == 0 or len(region) >= n:
        raise ValueError("region must be a nonempty proper subset of sites")
    if configs_a.shape != configs_b.shape:
        raise ValueError("replica sample sets must be paired 1:1")
    swapped_a = configs_a.copy()
    swapped_b = configs_b.copy()
    swapped_a[:, region] = configs_b[:, region]
    swapped_b[:, region] = configs_a[:, region]
    ok = (st.is_restricted(model.lat, swapped_a)
          & st.is_restricted(model.lat, swapped_b))
    ratios = np.zeros(len(configs_a), dtype=complex)
    if ok.any():
        log_sa = model.log_amplitude(p, swapped_a[ok])
        log_sb = model.log_amplitude(p, swapped_b[ok])
        ratios[ok] = np.exp(log_sa + log_sb - log_a[ok] - log_b[ok])
    return ratios


def renyi2(model, p, region, samples_a: SampleSet, samples_b: SampleSet,
           n_boot: int = 1024, seed=None) -> Estimate:
    """S2 = -ln E[swap ratio] over paired replicas, bootstrap error bar."""
    ca, la = samples_a.flat()
    cb, lb = samples_b.flat()
    m = min(len(ca), len(cb))
    ratios = swap_ratios(model, p, region, ca[:m], la[:m], cb[:m], lb[:m])
    mean = ratios.real.mean()
    if mean <= 0:
        raise RuntimeError("swap estimator collapsed (non-positive purity "
                           "estimate); draw more samples")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, m, size=(n_boot, m))
    boot = ratios.real[idx].mean(axis=1)
    boot = np.where(boot > 0, boot, np.nan)
    s2_boot = -np.log(boot)
    stderr = float(np.nanstd(s2_boot))
    k = samples_a.n_chains
    return Estimate(mean=complex(-np.log(mean)), stderr=stderr,
                    n_samples=m, n_chains=k, tau=1.0)
