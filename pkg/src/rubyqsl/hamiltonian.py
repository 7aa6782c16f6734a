"""Rydberg Hamiltonian pieces: interaction, schedules, disorder, local energy.

Internal units are microseconds for time and rad/us for angular frequencies;
lengths are micrometres.  The Hamiltonian is

    H(t) = -(Omega(t)/2) sum_i x_i  -  Delta(t) sum_i n_i
           + sum_{i<j} V(r_ij) n_i n_j ,      V(r) = V0 / r^6

with x the flip operator between ground and excited level.  Inside the
blockade-restricted space the flip g->r is allowed only when the whole
triangle is empty; r->g is always allowed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lattice import RubyLattice

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class RydbergParams:
    """Drive and interaction scales.  rb = blockade radius (same units as a)."""

    omega0: float = TWO_PI * 1.4  # rad/us
    a: float = 3.9                # um
    rb: float = 2.4 * 3.9         # um

    @property
    def v0(self) -> float:
        """Interaction prefactor; V(r) = v0 / r^6, so V(rb) = omega0."""
        return self.omega0 * self.rb ** 6


def potential(params: RydbergParams, r) -> np.ndarray:
    """Van der Waals pair interaction at distance r (same units as params.a)."""
    r = np.asarray(r, dtype=float)
    if (r <= 0).any():
        raise ValueError("pair distance must be positive")
    return params.v0 / r ** 6


def blockade_ratios(params: RydbergParams) -> dict[str, float]:
    """V/Omega0 at the three vertex-sharing separations (diagnostics)."""
    return {
        "a": float(potential(params, params.a) / params.omega0),
        "sqrt3a": float(potential(params, math.sqrt(3.0) * params.a)
                        / params.omega0),
        "2a": float(potential(params, 2.0 * params.a) / params.omega0),
    }


@dataclass(frozen=True)
class Schedule:
    """Drive schedule: linear Omega ramp on [0, T/5], polynomial Delta sweep.

    Omega rises linearly from 0 to omega_max during the first fifth of the
    protocol and stays constant afterwards.  Delta holds delta_start during
    the ramp, then follows a degree-``degree`` monomial through the
    endpoints, reaching delta_end at t = T.
    """

    t_total: float = 2.5                      # us
    omega_max: float = TWO_PI * 1.4           # rad/us
    delta_start: float = -TWO_PI * 8.0        # rad/us
    delta_end: float = TWO_PI * 9.4           # rad/us
    degree: int = 3
    ramp_fraction: float = 0.2

    def __post_init__(self):
        if self.t_total <= 0:
            raise ValueError("protocol duration must be positive")
        if not 0 <= self.ramp_fraction < 1:
            raise ValueError("ramp fraction must lie in [0, 1)")
        if self.degree < 1:
            raise ValueError("sweep degree must be at least 1")

    @property
    def t_ramp(self) -> float:
        return self.ramp_fraction * self.t_total

    def _check(self, t):
        t = np.asarray(t, dtype=float)
        if (t < -1e-9 * self.t_total).any() or (t > self.t_total * (1 + 1e-9)).any():
            raise ValueError("schedule evaluated outside [0, T]")
        return np.clip(t, 0.0, self.t_total)

    def omega(self, t):
        t = self._check(t)
        if self.t_ramp == 0:
            out = np.full_like(t, self.omega_max)
        else:
            out = self.omega_max * np.minimum(t / self.t_ramp, 1.0)
        return out if out.ndim else float(out)

    def delta(self, t):
        t = self._check(t)
        tr = self.t_ramp
        span = self.t_total - tr
        x = np.clip((t - tr) / span, 0.0, 1.0)
        out = self.delta_start + (self.delta_end - self.delta_start) * x ** self.degree
        return out if out.ndim else float(out)

    def __call__(self, t):
        return self.omega(t), self.delta(t)


@dataclass(frozen=True)
class DisorderRealization:
    """Per-site fractional shifts: Omega_i = Omega (1 + wx_i), Delta_i =
    Delta (1 + wn_i)."""

    wx: np.ndarray
    wn: np.ndarray

    @classmethod
    def none(cls, n_sites: int) -> "DisorderRealization":
        return cls(np.zeros(n_sites), np.zeros(n_sites))

    @classmethod
    def draw(cls, n_sites: int, var_x: float, var_n: float,
             rng: np.random.Generator) -> "DisorderRealization":
        return cls(rng.normal(0.0, math.sqrt(var_x), n_sites),
                   rng.normal(0.0, math.sqrt(var_n), n_sites))

    @property
    def is_zero(self) -> bool:
        return not (self.wx.any() or self.wn.any())


def interaction_matrix(lat: RubyLattice, params: RydbergParams,
                       include_intra_triangle: bool = True,
                       cutoff: float | None = None) -> np.ndarray:
    """Symmetric (N, N) matrix of pair interactions, zero diagonal.

    Distances use the minimum image on periodic shapes.  Pairs inside one
    blockade triangle can be masked out: on restricted configurations they
    never contribute, but the full-space mean-field stage needs them.
    """
    q = lat.pair_dist2_keys()  # 4 d^2 in units of a^2, exact integers
    n = lat.n_sites
    r = params.a * np.sqrt(q / 4.0)
    np.fill_diagonal(r, np.inf)
    v = params.v0 / r ** 6
    if cutoff is not None:
        v[r > cutoff] = 0.0
    if not include_intra_triangle:
        for tri in lat.triangles:
            for a in tri:
                for b in tri:
                    if a != b:
                        v[a, b] = 0.0
    return v


class RestrictedHamiltonian:
    """Local-energy evaluation in the blockade-restricted space."""

    def __init__(self, lat: RubyLattice, params: RydbergParams | None = None):
        self.lat = lat
        self.params = params if params is not None else RydbergParams()
        self.vmat = interaction_matrix(lat, self.params,
                                       include_intra_triangle=False)
        # site -> the other two sites of its triangle
        n = lat.n_sites
        self.partners = np.empty((n, 2), dtype=np.int64)
        for tri in lat.triangles:
            for k, s in enumerate(tri):
                self.partners[s] = [tri[(k + 1) % 3], tri[(k + 2) % 3]]

    def diagonal(self, configs: np.ndarray, delta: float,
                 disorder: DisorderRealization | None = None) -> np.ndarray:
        """-Delta sum (1+wn_i) n_i + sum_{i<j} V_ij n_i n_j, per configuration."""
        configs = np.atleast_2d(np.asarray(configs, dtype=np.float64))
        wn = 0.0 if disorder is None else disorder.wn
        occ_term = configs @ (np.full(self.lat.n_sites, delta) * (1.0 + wn))
        pair_term = 0.5 * np.einsum("mi,ij,mj->m", configs, self.vmat, configs)
        return -occ_term + pair_term

    def allowed_flips(self, configs: np.ndarray) -> np.ndarray:
        """Boolean (M, N): flips keeping the configuration restricted."""
        configs = np.atleast_2d(np.asarray(configs))
        partner_occ = (configs[:, self.partners[:, 0]]
                       + configs[:, self.partners[:, 1]])
        return (configs == 1) | ((configs == 0) & (partner_occ == 0))

    def local_energy(self, model, p, configs: np.ndarray, omega: float,
                     delta: float,
                     disorder: DisorderRealization | None = None,
                     log_psi: np.ndarray | None = None) -> np.ndarray:
        """E_loc(sigma) = sum_s' <sigma|H|s'> psi(s')/psi(sigma), shape (M,)."""
        configs = np.atleast_2d(np.asarray(configs, dtype=np.int8))
        m, n = configs.shape
        if log_psi is None:
            log_psi = model.log_amplitude(p, configs)
        if np.isneginf(log_psi.real).any():
            raise ValueError("local energy requested at a zero-amplitude "
                             "configuration")
        eloc = self.diagonal(configs, delta, disorder).astype(complex)
        if omega != 0.0:
            wx = np.zeros(n) if disorder is None else disorder.wx
            allowed = self.allowed_flips(configs)
            rows, sites = np.nonzero(allowed)
            flipped = configs[rows]
            flipped[np.arange(len(rows)), sites] ^= 1
            log_flip = model.log_amplitude(p, flipped)
            ratios = np.exp(log_flip - log_psi[rows])
            amp = -(omega / 2.0) * (1.0 + wx[sites]) * ratios
            np.add.at(eloc, rows, amp)
        return eloc
