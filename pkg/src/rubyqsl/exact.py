"""Exact state-vector engine on the restricted space.

The state is a dense complex vector over all 4^T triangle words (T =
number of triangles), reshaped to a (4,)*T tensor so the drive term acts
as one 4x4 matrix per triangle axis.  Feasible up to a few dozen sites;
meant as the reference oracle for the variational machinery.

Basis order matches the configuration indexing of :mod:`rubyqsl.state`:
triangle 0 is the most significant base-4 digit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from . import state as st
from .hamiltonian import (DisorderRealization, RydbergParams, Schedule,
                          interaction_matrix)
from .lattice import RubyLattice, StringPath


class ExactEngine:
    """Hamiltonian application and fixed-step propagation, restricted space."""

    def __init__(self, lat: RubyLattice, params: RydbergParams | None = None):
        self.lat = lat
        self.params = params if params is not None else RydbergParams()
        self.t_count = lat.n_triangles
        self.dim = 4 ** self.t_count
        if self.dim > 2 ** 26:
            raise ValueError("restricted space too large for the exact engine")
        self.occupations = st.all_restricted_configs(lat)  # (dim, N) int8
        vmat = interaction_matrix(lat, self.params,
                                  include_intra_triangle=False)
        occ = self.occupations.astype(np.float64)
        self._diag_pair = 0.5 * np.einsum("mi,ij,mj->m", occ, vmat, occ)
        self._occ_float = occ
        self.last_norm_drift = 0.0

    # -- Hamiltonian pieces ----------------------------------------------------

    def diagonal(self, delta: float,
                 disorder: DisorderRealization | None = None) -> np.ndarray:
        wn = 0.0 if disorder is None else disorder.wn
        weights = np.full(self.lat.n_sites, delta) * (1.0 + wn)
        return self._diag_pair - self._occ_float @ weights

    def _drive_blocks(self, omega: float,
                      disorder: DisorderRealization | None = None) -> np.ndarray:
        """(T, 4, 4) per-triangle drive matrices."""
        wx = np.zeros(self.lat.n_sites) if disorder is None else disorder.wx
        blocks = np.zeros((self.t_count, 4, 4))
        for t, tri in enumerate(self.lat.triangles):
            for j, s in enumerate(tri):
                amp = -(omega / 2.0) * (1.0 + wx[s])
                blocks[t, 0, j + 1] = amp
                blocks[t, j + 1, 0] = amp
        return blocks

    def apply(self, psi: np.ndarray, omega: float, delta: float,
              disorder: DisorderRealization | None = None,
              diag: np.ndarray | None = None,
              blocks: np.ndarray | None = None) -> np.ndarray:
        """H psi for the instantaneous drive values."""
        if diag is None:
            diag = self.diagonal(delta, disorder)
        if blocks is None:
            blocks = self._drive_blocks(omega, disorder)
        out = diag * psi
        tensor = psi.reshape((4,) * self.t_count)
        for t in range(self.t_count):
            moved = np.tensordot(blocks[t], tensor, axes=([1], [t]))
            out += np.moveaxis(moved, 0, t).reshape(-1)
        return out

    def build_h(self, omega: float, delta: float,
                disorder: DisorderRealization | None = None
                ) -> scipy.sparse.csr_matrix:
        """Materialized Hamiltonian, sparse Hermitian.

        One off-diagonal entry -(omega/2)(1+wx_i) per allowed flip: a site
        can always relax, and can only be excited out of a fully empty
        triangle, which in the base-4 word means its triangle digit is 0.
        """
        wx = np.zeros(self.lat.n_sites) if disorder is None else disorder.wx
        idx = np.arange(self.dim, dtype=np.int64)
        rows, cols, vals = [], [], []
        for t, tri in enumerate(self.lat.triangles):
            shift = 2 * (self.t_count - 1 - t)
            digit = (idx >> shift) & 3
            empty = idx[digit == 0]
            for j, s in enumerate(tri):
                partner = empty + ((j + 1) << shift)
                amp = np.full(len(empty), -(omega / 2.0) * (1.0 + wx[s]))
                rows.extend([empty, partner])
                cols.extend([partner, empty])
                vals.extend([amp, amp])
        diag = self.diagonal(delta, disorder)
        rows.append(idx)
        cols.append(idx)
        vals.append(diag)
        h = scipy.sparse.coo_matrix(
            (np.concatenate(vals),
             (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.dim, self.dim))
        return h.tocsr()

    def linear_operator(self, omega: float, delta: float,
                        disorder: DisorderRealization | None = None):
        diag = self.diagonal(delta, disorder)
        blocks = self._drive_blocks(omega, disorder)
        return scipy.sparse.linalg.LinearOperator(
            (self.dim, self.dim),
            matvec=lambda v: self.apply(v.astype(complex), omega, delta,
                                        diag=diag, blocks=blocks),
            dtype=complex)

    def ground_state(self, omega: float, delta: float,
                     disorder: DisorderRealization | None = None):
        """Lowest eigenpair (energy, normalized vector)."""
        op = self.linear_operator(omega, delta, disorder)
        vals, vecs = scipy.sparse.linalg.eigsh(op, k=1, which="SA")
        v = vecs[:, 0]
        return float(vals[0]), v / np.linalg.norm(v)

    # -- propagation -----------------------------------------------------------

    def initial_all_ground(self) -> np.ndarray:
        psi = np.zeros(self.dim, dtype=complex)
        psi[0] = 1.0
        return psi

    def evolve(self, psi0: np.ndarray, schedule: Schedule, dt: float = 1e-4,
               t_start: float = 0.0, t_end: float | None = None,
               disorder: DisorderRealization | None = None,
               observer=None, observe_every: int = 0) -> np.ndarray:
        """Propagate i d/dt psi = H(t) psi with classical RK4, fixed step.

        ``dt`` defaults to 0.1 ns: the blockade-scale diagonal entries are
        the fastest phases and stay deep inside the RK4 stability region
        there.  The state is renormalized after every step; the worst
        pre-renormalization drift is tracked in ``last_norm_drift`` and a
        drift beyond 1e-4 aborts as a step-size failure.  ``observer(t,
        psi)`` is called every ``observe_every`` steps (and at both
        endpoints) when given.
        """
        if t_end is None:
            t_end = schedule.t_total
        steps = max(1, int(round((t_end - t_start) / dt)))
        dt = (t_end - t_start) / steps
        psi = psi0.astype(complex).copy()
        if observer is not None:
            observer(t_start, psi)
        t = t_start
        drift = 0.0
        for k in range(steps):
            psi = self._rk4_step(psi, t, dt, schedule, disorder)
            norm = np.linalg.norm(psi)
            drift = max(drift, abs(norm - 1.0))
            if drift > 1e-4:
                raise RuntimeError(
                    f"norm drift {drift:.2e} at t={t + dt:.6f}; "
                    "reduce the step size")
            psi /= norm
            t = t_start + (k + 1) * dt
            if observer is not None and (
                    (observe_every and (k + 1) % observe_every == 0)
                    or k == steps - 1):
                observer(t, psi)
        self.last_norm_drift = drift
        return psi

    def _rk4_step(self, psi, t, dt, schedule: Schedule, disorder,
                  extra_diag: np.ndarray | None = None) -> np.ndarray:
        """One RK4 step of -i(H(t) + extra_diag) psi.

        ``extra_diag`` extends the generator by a diagonal term (the
        anti-Hermitian decay part of open-system stepping); when absent the
        arithmetic is exactly the closed-evolution step, which keeps
        zero-rate trajectory runs bit-identical to `evolve`.
        """
        if extra_diag is None:
            def rhs(tt, v):
                om, de = schedule(tt)
                return -1j * self.apply(v, om, de, disorder)
        else:
            def rhs(tt, v):
                om, de = schedule(tt)
                return -1j * (self.apply(v, om, de, disorder)
                              + extra_diag * v)

        k1 = rhs(t, psi)
        k2 = rhs(t + dt / 2, psi + (dt / 2) * k1)
        k3 = rhs(t + dt / 2, psi + (dt / 2) * k2)
        k4 = rhs(t + dt, psi + dt * k3)
        return psi + (dt / 6) * (k1 + 2 * k2 + 2 * k3 + k4)

    # -- measurements ----------------------------------------------------------

    def expectation_diagonal(self, psi: np.ndarray,
                             values: np.ndarray) -> float:
        w = np.abs(psi) ** 2
        return float((w @ values).real / w.sum())

    def energy(self, psi: np.ndarray, omega: float, delta: float,
               disorder: DisorderRealization | None = None) -> float:
        h_psi = self.apply(psi, omega, delta, disorder)
        return float((np.vdot(psi, h_psi) / np.vdot(psi, psi)).real)

    def density(self, psi: np.ndarray) -> np.ndarray:
        """Per-site excitation probability."""
        w = np.abs(psi) ** 2
        return (w @ self._occ_float) / w.sum()

    def parity_expectation(self, psi: np.ndarray, path: StringPath) -> float:
        vals = st.parity_eigenvalue(self.lat, path, self.occupations)
        return self.expectation_diagonal(psi, vals.astype(float))

    def q_expectation(self, psi: np.ndarray, path: StringPath) -> complex:
        mapped = st.apply_q_string(self.lat, path, self.occupations)
        perm = st.config_to_index(self.lat, mapped)
        return complex(np.vdot(psi, psi[perm]) / np.vdot(psi, psi))

    def amplitudes_from_model(self, model, p) -> np.ndarray:
        """Normalized exact vector of a variational state (batched)."""
        out = np.empty(self.dim, dtype=complex)
        chunk = 1 << 14
        logs = np.empty(self.dim, dtype=complex)
        for lo in range(0, self.dim, chunk):
            hi = min(self.dim, lo + chunk)
            logs[lo:hi] = model.log_amplitude(p, self.occupations[lo:hi])
        ref = logs.real.max()
        out = np.exp(logs - ref)
        return out / np.linalg.norm(out)

    def fidelity(self, psi: np.ndarray, model, p) -> float:
        """|<psi|psi_theta>|^2 for normalized inputs."""
        phi = self.amplitudes_from_model(model, p)
        v = psi / np.linalg.norm(psi)
        return float(np.abs(np.vdot(v, phi)) ** 2)

    def renyi2(self, psi: np.ndarray, region) -> float:
        """Exact second Renyi entropy of a site region via a sparse Gram trick.

        With psi arranged as a (region configs) x (rest configs) matrix M,
        tr rho_X^2 = ||M* M||_F^2 / ||psi||^4; M has at most dim nonzeros,
        so the Gram product stays sparse even for large split dimensions.
        """
        region = sorted(set(int(s) for s in region))
        n = self.lat.n_sites
        if not region or len(region) >= n:
            raise ValueError("region must be a nonempty proper subset")
        rest = [s for s in range(n) if s not in set(region)]
        occ = self.occupations
        row_key = _bit_key(occ[:, region])
        col_key = _bit_key(occ[:, rest])
        rows, row_idx = np.unique(row_key, return_inverse=True)
        cols, col_idx = np.unique(col_key, return_inverse=True)
        norm2 = float(np.vdot(psi, psi).real)
        mat = scipy.sparse.coo_matrix(
            (psi / math.sqrt(norm2), (row_idx, col_idx)),
            shape=(len(rows), len(cols))).tocsr()
        gram = (mat.conj().T @ mat).tocoo()
        purity = float(np.sum(np.abs(gram.data) ** 2))
        return -math.log(purity)

    # -- fidelity optimization ---------------------------------------------------

    def optimize_fidelity(self, psi_target: np.ndarray, model,
                          steps: int = 500, seed: int | None = None,
                          init=None, perturb: float = 0.02,
                          chunk: int = 8192) -> "FidelityOptResult":
        """Maximize |<target|psi_theta>|^2 over the ansatz by full summation.

        Quasi-Newton descent on -log F with the analytic gradient; the
        log-derivative matrix is accumulated in chunks so large parameter
        counts never materialize a (dim x n_params) array at once.
        """
        import scipy.optimize

        target = psi_target / np.linalg.norm(psi_target)
        rng = np.random.default_rng(seed)
        if init is not None:
            vec0 = model.to_vector(init).astype(complex)
        else:
            vec0 = model.to_vector(model.init_params()).astype(complex)
        vec0 = vec0 + perturb * (rng.standard_normal(vec0.shape)
                                 + 1j * rng.standard_normal(vec0.shape))
        configs = self.occupations
        n_par = len(vec0)

        def objective(x):
            vec = x[:n_par] + 1j * x[n_par:]
            p = model.from_vector(vec)
            log_psi = model.log_amplitude(p, configs)
            amp = np.exp(log_psi - log_psi.real.max())
            norm2 = np.vdot(amp, amp).real
            overlap = np.vdot(target, amp)
            f_val = np.abs(overlap) ** 2 / norm2
            # gradient accumulators: sum psi_t* psi D and sum |psi|^2 D
            a = np.zeros(n_par, dtype=complex)
            b = np.zeros(n_par, dtype=complex)
            for lo in range(0, len(configs), chunk):
                sl = slice(lo, lo + chunk)
                d = model.log_derivatives(p, configs[sl])
                a += (target[sl].conj() * amp[sl]) @ d
                b += (np.abs(amp[sl]) ** 2) @ d
            safe = overlap if np.abs(overlap) > 1e-150 else 1e-150
            g = a / safe - b / norm2
            grad = np.concatenate([-2.0 * g.real, 2.0 * g.imag])
            return -np.log(max(f_val, 1e-300)), grad

        x0 = np.concatenate([vec0.real, vec0.imag])
        res = scipy.optimize.minimize(objective, x0, jac=True,
                                      method="L-BFGS-B",
                                      options={"maxiter": steps,
                                               "maxfun": 4 * steps,
                                               "ftol": 1e-16,
                                               "gtol": 1e-13})
        vec = res.x[:n_par] + 1j * res.x[n_par:]
        p_best = model.from_vector(vec)
        infid = 1.0 - self.fidelity(target, model, p_best)
        return FidelityOptResult(params=p_best, infidelity=float(infid),
                                 converged=bool(res.success),
                                 n_iter=int(res.nit))


@dataclass
class FidelityOptResult:
    params: object
    infidelity: float
    converged: bool
    n_iter: int


def _bit_key(bits: np.ndarray) -> np.ndarray:
    """Pack boolean columns into integer keys (object dtype if > 63 bits)."""
    m, w = bits.shape
    if w <= 63:
        weights = (1 << np.arange(w, dtype=np.int64))
        return bits.astype(np.int64) @ weights
    key = np.zeros(m, dtype=object)
    for j in range(w):
        key = key * 2 + bits[:, j].astype(int)
    return key
