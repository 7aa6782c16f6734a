"""Tangent-space projection of the dynamics, and the mean-field bootstrap.

The variational flow solves

    S(theta) theta_dot = -i C(theta)

with the quantum geometric tensor S and force vector C estimated as
centered (cross-)covariances of log-derivatives over Born samples, a
regularized pseudo-inverse solve, and fixed-step integration (Heun by
default) with fresh samples at every stage evaluation.

The protocol starts from the all-ground state where Monte Carlo sampling
of the restricted ansatz degenerates, so the first stretch runs as a
closed-form product-state evolution in the full (unconstrained) space; at
the handoff time its per-site amplitudes seed the restricted ansatz.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import state as st
from .ansatz import JmfParams
from .hamiltonian import (DisorderRealization, RestrictedHamiltonian,
                          RydbergParams, Schedule, interaction_matrix)
from .lattice import RubyLattice
from .sampler import run_mcmc


# -- tangent-space estimators ----------------------------------------------------


def estimate_qgt(d: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """Centered covariance S_ij = E[D_i* (D_j - E[D_j])], Hermitized.

    ``d`` is (n_samples, n_params); uniform weights when none are given.
    """
    d = np.asarray(d)
    if d.size == 0:
        raise ValueError("empty sample set")
    w = _norm_weights(weights, len(d))
    mean = w @ d
    centered = d - mean
    s = (centered.conj() * w[:, None]).T @ centered
    return 0.5 * (s + s.conj().T)


def estimate_forces(d: np.ndarray, e_loc: np.ndarray,
                    weights: np.ndarray | None = None) -> np.ndarray:
    """Centered cross-covariance C_i = E[D_i* (E_loc - E[E_loc])]."""
    d = np.asarray(d)
    e_loc = np.asarray(e_loc)
    if d.size == 0:
        raise ValueError("empty sample set")
    w = _norm_weights(weights, len(d))
    d_mean = w @ d
    e_mean = w @ e_loc
    return ((d - d_mean).conj() * w[:, None]).T @ (e_loc - e_mean)


def _norm_weights(weights, n) -> np.ndarray:
    if weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if total <= 0:
        raise ValueError("weights must have positive total mass")
    return w / total


def solve_update(s: np.ndarray, c: np.ndarray, diag_shift: float = 1e-4,
                 pinv_cutoff: float = 1e-8) -> np.ndarray:
    """theta_dot = -i pinv(S + eps diag(S)) C.

    The pseudo-inverse drops singular values below cutoff times the largest
    one, which absorbs the exact gauge/null directions of over-parameterized
    ansaetze.
    """
    s = np.asarray(s)
    if not np.abs(s).max() > 0:
        raise ValueError("metric is numerically zero")
    reg = s + diag_shift * np.diag(np.diag(s).real)
    return -1j * (np.linalg.pinv(reg, rcond=pinv_cutoff, hermitian=True) @ c)


# -- sampled / full-sum expectation backends ------------------------------------


@dataclass
class TdvpConfig:
    dt: float = 1e-3           # us
    integrator: str = "heun"   # "heun" | "rk4"
    diag_shift: float = 1e-4
    pinv_cutoff: float = 1e-8
    full_sum: bool = False
    n_chains: int = 64
    n_samples: int = 64        # per chain per stage
    n_burnin: int = 128        # sweeps before the first stage
    stage_burnin: int = 2      # sweeps re-equilibrating warm chains per stage
    thin: int = 2
    seed: int | None = None

    def __post_init__(self):
        if self.integrator not in ("heun", "rk4"):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.dt <= 0:
            raise ValueError("time step must be positive")


class TdvpDriver:
    """Integrates the projected flow for any ansatz with log-derivatives."""

    def __init__(self, model, ham: RestrictedHamiltonian, schedule: Schedule,
                 config: TdvpConfig | None = None,
                 disorder: DisorderRealization | None = None):
        self.model = model
        self.ham = ham
        self.schedule = schedule
        self.config = config if config is not None else TdvpConfig()
        self.disorder = disorder
        self.rng = np.random.default_rng(self.config.seed)
        self._chains: np.ndarray | None = None
        self._all_configs: np.ndarray | None = None
        if self.config.full_sum:
            self._all_configs = st.all_restricted_configs(model.lat)

    # one tangent-space evaluation: sample (or enumerate), assemble, solve
    def theta_dot(self, vec: np.ndarray, t: float) -> np.ndarray:
        omega, delta = self.schedule(t)
        p = self.model.from_vector(vec)
        if self.config.full_sum:
            configs = self._all_configs
            log_psi = self.model.log_amplitude(p, configs)
            log_w = 2.0 * log_psi.real
            weights = np.exp(log_w - log_w.max())
        else:
            burn = (self.config.n_burnin if self._chains is None
                    else self.config.stage_burnin)
            samples = run_mcmc(self.model, p, self.config.n_chains,
                               self.config.n_samples, burn,
                               thin=self.config.thin, init=self._chains,
                               rng=self.rng)
            self._chains = samples.final
            configs, log_psi = samples.flat()
            weights = None
        d = self.model.log_derivatives(p, configs)
        e_loc = self.ham.local_energy(self.model, p, configs, omega, delta,
                                      disorder=self.disorder, log_psi=log_psi)
        s = estimate_qgt(d, weights)
        c = estimate_forces(d, e_loc, weights)
        dot = solve_update(s, c, self.config.diag_shift,
                           self.config.pinv_cutoff)
        if not np.isfinite(dot).all():
            raise RuntimeError(f"non-finite parameter velocity at t={t:.6f}")
        return dot

    def run(self, p0, t_start: float, t_end: float, observer=None,
            observe_every: int = 0):
        """Integrate from t_start to t_end; returns the final parameters.

        ``observer(t, params)`` fires before the first step, every
        ``observe_every`` steps, and at the end.
        """
        cfg = self.config
        steps = max(1, int(round((t_end - t_start) / cfg.dt)))
        dt = (t_end - t_start) / steps
        vec = self.model.to_vector(p0).astype(complex)
        if observer is not None:
            observer(t_start, self.model.from_vector(vec))
        t = t_start
        for k in range(steps):
            if cfg.integrator == "heun":
                f1 = self.theta_dot(vec, t)
                f2 = self.theta_dot(vec + dt * f1, t + dt)
                vec = vec + 0.5 * dt * (f1 + f2)
            else:
                f1 = self.theta_dot(vec, t)
                f2 = self.theta_dot(vec + 0.5 * dt * f1, t + 0.5 * dt)
                f3 = self.theta_dot(vec + 0.5 * dt * f2, t + 0.5 * dt)
                f4 = self.theta_dot(vec + dt * f3, t + dt)
                vec = vec + (dt / 6.0) * (f1 + 2 * f2 + 2 * f3 + f4)
            t = t_start + (k + 1) * dt
            if observer is not None and (
                    (observe_every and (k + 1) % observe_every == 0)
                    or k == steps - 1):
                observer(t, self.model.from_vector(vec))
        return self.model.from_vector(vec)


# -- mean-field bootstrap ---------------------------------------------------------


@dataclass
class MfState:
    """Normalized per-site product state, global phase fixed by real alpha."""

    beta: np.ndarray   # complex (N,)
    alpha: np.ndarray  # real (N,), positive

    def copy(self) -> "MfState":
        return MfState(self.beta.copy(), self.alpha.copy())

    def normalize(self):
        norm = np.sqrt(self.alpha ** 2 + np.abs(self.beta) ** 2)
        if (norm == 0).any():
            raise FloatingPointError("site state collapsed to zero")
        self.alpha = self.alpha / norm
        self.beta = self.beta / norm
        if (self.alpha <= 1e-12).any():
            raise FloatingPointError("ground amplitude vanished; the "
                                     "product-state gauge breaks down")

    @classmethod
    def all_ground(cls, n_sites: int) -> "MfState":
        return cls(np.zeros(n_sites, dtype=complex), np.ones(n_sites))


def _effective_fields(omega: float, delta: float, n_sites: int,
                      disorder: DisorderRealization | None):
    if disorder is None:
        return np.full(n_sites, omega), np.full(n_sites, delta)
    return omega * (1.0 + disorder.wx), delta * (1.0 + disorder.wn)


def bootstrap_rhs_closed(mf: MfState, omega: float, delta: float,
                         vmat: np.ndarray,
                         disorder: DisorderRealization | None = None):
    """Analytic projected flow of the product state.

    v_k = -Delta_k + sum_l V_kl |beta_l|^2 ;
    beta_dot = -i v beta - i (Omega/2)(beta Re(beta)/alpha - alpha) ;
    alpha_dot = -(Omega/2) Im(beta).
    """
    om, de = _effective_fields(omega, delta, len(mf.alpha), disorder)
    v = -de + vmat @ (np.abs(mf.beta) ** 2)
    beta_dot = (-1j * v * mf.beta
                - 1j * (om / 2.0) * (mf.beta * mf.beta.real / mf.alpha
                                     - mf.alpha))
    alpha_dot = -(om / 2.0) * mf.beta.imag
    return beta_dot, alpha_dot


def reduce_forces_to_velocity(mf: MfState, b: np.ndarray, a: np.ndarray):
    """Solve the per-site projected system for (beta_dot, alpha_dot).

    The per-site metric [[|a|^2, -b a*], [-b* a, |b|^2]] is singular along
    the normalization direction; fixing the gauge (alpha real, norm
    preserved) leaves an invertible 2x2 real system whose solution is
    written out explicitly here.  ``b`` and ``a`` are the force components
    conjugate to beta and alpha.
    """
    ar = mf.alpha
    br, bi = mf.beta.real, mf.beta.imag
    beta_dot_r = ((ar ** 2 + bi ** 2) * b.imag + bi * br * b.real
                  - ar * br * a.imag - (bi / ar) * a.real)
    beta_dot_i = (-(ar ** 2 + br ** 2) * b.real - bi * br * b.imag
                  - ar * bi * a.imag + (br / ar) * a.real)
    beta_dot = beta_dot_r + 1j * beta_dot_i
    alpha_dot = -(br * beta_dot_r + bi * beta_dot_i) / ar
    return beta_dot, alpha_dot


def product_born_weights(mf: MfState, occ: np.ndarray) -> np.ndarray:
    """Born weights of full-space occupation words under the product state.

    Exact zeros where an excited site has beta = 0, so callers can mask
    unreachable words before forming ratios.
    """
    excited = np.asarray(occ) > 0
    pa = mf.alpha ** 2
    pb = np.abs(mf.beta) ** 2
    return np.prod(np.where(excited, pb[None, :], pa[None, :]), axis=1)


def product_log_derivatives(mf: MfState, occ: np.ndarray) -> np.ndarray:
    """(M, 2N) log-derivatives [d/d beta_k, d/d alpha_k] of the product state."""
    excited = np.asarray(occ) > 0
    with np.errstate(divide="ignore"):
        inv_b = np.where(mf.beta == 0, 0.0, 1.0) / np.where(
            mf.beta == 0, 1.0, mf.beta)
        inv_a = 1.0 / mf.alpha
    d_beta = np.where(excited, inv_b[None, :], 0.0)
    d_alpha = np.where(excited, 0.0, inv_a[None, :])
    return np.concatenate([d_beta, d_alpha], axis=1)


def product_local_energy_full(mf: MfState, occ: np.ndarray, omega: float,
                              delta: float, vmat: np.ndarray,
                              disorder: DisorderRealization | None = None
                              ) -> np.ndarray:
    """Local energies of full-space words (all single flips allowed)."""
    excited = np.asarray(occ) > 0
    occf = excited.astype(float)
    om, de = _effective_fields(omega, delta, occf.shape[1], disorder)
    diag = -(occf @ de) + 0.5 * np.einsum("mi,ij,mj->m", occf, vmat, occf)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio_up = mf.beta / mf.alpha
        ratio_dn = np.where(mf.beta == 0, 0.0, mf.alpha) / np.where(
            mf.beta == 0, 1.0, mf.beta)
    flips = np.where(excited, ratio_dn[None, :], ratio_up[None, :])
    return diag + flips @ (-(om / 2.0))


def bootstrap_rhs_generic(mf: MfState, omega: float, delta: float,
                          vmat: np.ndarray,
                          disorder: DisorderRealization | None = None,
                          occ: np.ndarray | None = None):
    """Projected flow assembled from full-space enumeration.

    Same gauge reduction as the closed form, but the forces come from the
    generic centered-covariance estimator over all 2^N occupation words;
    agreement with :func:`bootstrap_rhs_closed` validates the analytic
    projection.  Exponential cost: keep N small.

    Degenerate at the bare all-ground state: the Born measure is a point
    mass there, every centered covariance vanishes, and the estimator
    returns zero velocity where the true flow does not.  Start comparisons
    from any state with nonzero beta on each site.
    """
    n = len(mf.alpha)
    if occ is None:
        if n > 16:
            raise ValueError("full-space enumeration limited to N <= 16")
        occ = _full_space_occupations(n)
    w = product_born_weights(mf, occ)
    keep = w > 0
    occ, w = occ[keep], w[keep]
    w = w / w.sum()
    d = product_log_derivatives(mf, occ)
    e_loc = product_local_energy_full(mf, occ, omega, delta, vmat, disorder)
    c = estimate_forces(d, e_loc, w)
    return reduce_forces_to_velocity(mf, c[:n], c[n:])


def _full_space_occupations(n: int) -> np.ndarray:
    idx = np.arange(1 << n, dtype=np.int64)
    return ((idx[:, None] >> np.arange(n - 1, -1, -1)) & 1).astype(np.int8)


@dataclass
class BootstrapResult:
    mf: MfState
    t_star: float
    handoff: JmfParams
    times: np.ndarray | None = None
    trajectory: list | None = None


def mf_bootstrap(lat: RubyLattice, schedule: Schedule, t_star: float,
                 dt: float = 1e-3, params: RydbergParams | None = None,
                 disorder: DisorderRealization | None = None,
                 rhs=bootstrap_rhs_closed, record: bool = False,
                 model=None, log_floor: float = -40.0) -> BootstrapResult:
    """Evolve the product state from all-ground over [0, t_star].

    RK4 fixed step with per-site renormalization after every step.  The
    returned handoff parameters are the restricted-ansatz mean field
    log phi(g) = log alpha, log phi(r) = log beta (real parts floored to
    keep exact zeros finite) with all Jastrow couplings zero.
    """
    params = params if params is not None else RydbergParams()
    vmat = interaction_matrix(lat, params, include_intra_triangle=True)
    mf = MfState.all_ground(lat.n_sites)
    steps = max(1, int(round(t_star / dt)))
    dt = t_star / steps
    times, traj = [], []
    if record:
        times.append(0.0)
        traj.append(mf.copy())
    t = 0.0
    for k in range(steps):
        mf = _bootstrap_rk4(mf, t, dt, schedule, vmat, disorder, rhs)
        mf.normalize()
        t = (k + 1) * dt
        if record:
            times.append(t)
            traj.append(mf.copy())
    handoff = handoff_params(lat, mf, model=model, log_floor=log_floor)
    return BootstrapResult(mf=mf, t_star=t_star, handoff=handoff,
                           times=np.array(times) if record else None,
                           trajectory=traj if record else None)


def _bootstrap_rk4(mf: MfState, t, dt, schedule, vmat, disorder, rhs):
    def f(tt, state: MfState):
        om, de = schedule(tt)
        return rhs(state, om, de, vmat, disorder)

    def advance(state: MfState, db, da, h):
        return MfState(state.beta + h * db, state.alpha + h * da)

    k1 = f(t, mf)
    s2 = advance(mf, *k1, dt / 2)
    k2 = f(t + dt / 2, s2)
    s3 = advance(mf, *k2, dt / 2)
    k3 = f(t + dt / 2, s3)
    s4 = advance(mf, *k3, dt)
    k4 = f(t + dt, s4)
    beta = mf.beta + (dt / 6) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    alpha = mf.alpha + (dt / 6) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    return MfState(beta, alpha)


def handoff_params(lat: RubyLattice, mf: MfState, model=None,
                   log_floor: float = -40.0) -> JmfParams:
    """Restricted-ansatz parameters matching the product state on its support."""
    with np.errstate(divide="ignore"):
        log_a = np.log(mf.alpha.astype(complex))
        log_b = np.log(mf.beta.astype(complex))
    mf_block = np.stack([log_a, log_b], axis=1)
    real = mf_block.real
    real[np.isneginf(real)] = log_floor
    mf_block = real + 1j * np.nan_to_num(mf_block.imag)
    if model is None:
        from .ansatz import JastrowMeanField
        model = JastrowMeanField(lat)
    p = model.init_params()
    p.mf[:] = mf_block
    return p


def bootstrap_handoff_time(schedule: Schedule) -> float:
    """Default handoff instant: 40% of the drive ramp (2/25 of the protocol)."""
    return (2.0 / 25.0) * schedule.t_total
