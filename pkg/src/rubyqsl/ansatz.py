"""Jastrow mean-field wave functions on the restricted space.

The base ansatz is

    log psi(sigma) = sum_{i<j} sigma_i V_{d(i,j)} sigma_j + sum_i log phi_i(sigma_i)

with one complex Jastrow coupling per distance class and two complex
mean-field log-amplitudes per site.  Two drop-in variants widen the Jastrow:
a dense per-pair matrix, and a three-body term coupling distance-class pairs.
All three are linear in their parameters, so log-derivatives are
configuration functions independent of the parameter values.

Ising convention: sigma = +1 is the empty (ground) state, so the mean-field
column index equals the occupation number.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import (DistanceTable, RubyLattice, distance_classes,
                      vertex_sharing_matrix)

NEG_INF = float("-inf")


@dataclass
class JmfParams:
    """Mean field (N, 2) complex and one Jastrow coupling per distance class.

    mf[i, 0] is log phi_i at sigma = +1 (empty), mf[i, 1] at sigma = -1
    (excited); the real part may be -inf to encode an exact zero.
    """

    mf: np.ndarray
    jastrow: np.ndarray

    def copy(self) -> "JmfParams":
        return JmfParams(self.mf.copy(), self.jastrow.copy())


@dataclass
class DenseJastrowParams:
    """Mean field plus an upper-triangular per-pair coupling (i < j)."""

    mf: np.ndarray
    w: np.ndarray  # flattened strict upper triangle, row-major

    def copy(self) -> "DenseJastrowParams":
        return DenseJastrowParams(self.mf.copy(), self.w.copy())


@dataclass
class ThreeBodyParams:
    """JmfParams plus a (C, C) coupling over ordered distance-class pairs."""

    mf: np.ndarray
    jastrow: np.ndarray
    w3: np.ndarray

    def copy(self) -> "ThreeBodyParams":
        return ThreeBodyParams(self.mf.copy(), self.jastrow.copy(),
                               self.w3.copy())


def _as_sigma(configs: np.ndarray) -> np.ndarray:
    configs = np.atleast_2d(np.asarray(configs))
    return (1 - 2 * configs).astype(np.float64)


class JastrowMeanField:
    """Evaluation engine for the class-invariant Jastrow mean-field ansatz."""

    name = "jmf"

    def __init__(self, lat: RubyLattice, dist: DistanceTable | None = None):
        self.lat = lat
        self.dist = dist if dist is not None else distance_classes(lat)
        self.n_sites = lat.n_sites
        self.n_classes = self.dist.n_classes
        iu = np.triu_indices(self.n_sites, k=1)
        self._pairs_i, self._pairs_j = iu
        self._pair_class = self.dist.class_of[iu]

    # -- parameter plumbing ---------------------------------------------------

    @property
    def n_params(self) -> int:
        return 2 * self.n_sites + self.n_classes

    def init_params(self) -> JmfParams:
        return JmfParams(np.zeros((self.n_sites, 2), dtype=complex),
                         np.zeros(self.n_classes, dtype=complex))

    def to_vector(self, p: JmfParams) -> np.ndarray:
        return np.concatenate([p.mf[:, 0], p.mf[:, 1], p.jastrow])

    def from_vector(self, v: np.ndarray) -> JmfParams:
        n = self.n_sites
        mf = np.stack([v[:n], v[n:2 * n]], axis=1)
        return JmfParams(mf.astype(complex), v[2 * n:].astype(complex))

    # -- evaluation -----------------------------------------------------------

    def _mf_term(self, mf: np.ndarray, configs: np.ndarray) -> np.ndarray:
        configs = np.atleast_2d(np.asarray(configs)).astype(np.int64)
        picked = mf[np.arange(self.n_sites)[None, :], configs]
        return picked.sum(axis=1)

    def _jastrow_matrix(self, jastrow: np.ndarray) -> np.ndarray:
        jmat = np.zeros((self.n_sites, self.n_sites), dtype=complex)
        jmat[self._pairs_i, self._pairs_j] = jastrow[self._pair_class]
        return jmat

    def log_amplitude(self, p: JmfParams, configs: np.ndarray) -> np.ndarray:
        sig = _as_sigma(configs)
        jmat = self._jastrow_matrix(p.jastrow)
        quad = np.einsum("mi,ij,mj->m", sig, jmat, sig)
        return quad + self._mf_term(p.mf, configs)

    def log_derivatives(self, p: JmfParams, configs: np.ndarray) -> np.ndarray:
        configs = np.atleast_2d(np.asarray(configs))
        self._check_support(p.mf, configs)
        m = configs.shape[0]
        sig = _as_sigma(configs)
        d = np.empty((m, self.n_params), dtype=complex)
        n = self.n_sites
        d[:, :n] = configs == 0
        d[:, n:2 * n] = configs == 1
        d[:, 2 * n:] = self._class_pair_sums(sig)
        return d

    def _class_pair_sums(self, sig: np.ndarray) -> np.ndarray:
        prod = sig[:, self._pairs_i] * sig[:, self._pairs_j]
        out = np.zeros((sig.shape[0], self.n_classes))
        np.add.at(out, (slice(None), self._pair_class), prod)
        return out

    def _check_support(self, mf: np.ndarray, configs: np.ndarray):
        picked = mf[np.arange(self.n_sites)[None, :],
                    np.asarray(configs).astype(np.int64)]
        if np.isneginf(picked.real).any():
            raise ValueError("log-derivatives requested at a configuration "
                             "with exactly zero amplitude")


class DenseJastrow(JastrowMeanField):
    """Per-pair Jastrow couplings instead of class-invariant ones."""

    name = "dense"

    @property
    def n_params(self) -> int:
        return 2 * self.n_sites + len(self._pairs_i)

    def init_params(self) -> DenseJastrowParams:
        return DenseJastrowParams(np.zeros((self.n_sites, 2), dtype=complex),
                                  np.zeros(len(self._pairs_i), dtype=complex))

    def to_vector(self, p: DenseJastrowParams) -> np.ndarray:
        return np.concatenate([p.mf[:, 0], p.mf[:, 1], p.w])

    def from_vector(self, v: np.ndarray) -> DenseJastrowParams:
        n = self.n_sites
        mf = np.stack([v[:n], v[n:2 * n]], axis=1)
        return DenseJastrowParams(mf.astype(complex), v[2 * n:].astype(complex))

    def log_amplitude(self, p: DenseJastrowParams,
                      configs: np.ndarray) -> np.ndarray:
        sig = _as_sigma(configs)
        prod = sig[:, self._pairs_i] * sig[:, self._pairs_j]
        return prod @ p.w + self._mf_term(p.mf, configs)

    def log_derivatives(self, p: DenseJastrowParams,
                        configs: np.ndarray) -> np.ndarray:
        configs = np.atleast_2d(np.asarray(configs))
        self._check_support(p.mf, configs)
        m = configs.shape[0]
        sig = _as_sigma(configs)
        d = np.empty((m, self.n_params), dtype=complex)
        n = self.n_sites
        d[:, :n] = configs == 0
        d[:, n:2 * n] = configs == 1
        d[:, 2 * n:] = sig[:, self._pairs_i] * sig[:, self._pairs_j]
        return d

    def embed_jmf(self, p: JmfParams) -> DenseJastrowParams:
        """Dense parameters evaluating identically to the given JMF ones."""
        return DenseJastrowParams(p.mf.copy(),
                                  p.jastrow[self._pair_class].astype(complex))


class ThreeBodyJastrow(JastrowMeanField):
    """JMF plus sum_{i<j<k} W[d(i,j), d(j,k)] sigma_i sigma_j sigma_k."""

    name = "three-body"

    def __init__(self, lat: RubyLattice, dist: DistanceTable | None = None):
        super().__init__(lat, dist)
        from itertools import combinations
        n, c = self.n_sites, self.n_classes
        triples = np.fromiter((x for t in combinations(range(n), 3) for x in t),
                              dtype=np.int64).reshape(-1, 3)
        self._ti, self._tj, self._tk = triples.T
        self._triple_slot = (self.dist.class_of[self._ti, self._tj] * c
                             + self.dist.class_of[self._tj, self._tk])

    @property
    def n_params(self) -> int:
        return 2 * self.n_sites + self.n_classes + self.n_classes ** 2

    def init_params(self) -> ThreeBodyParams:
        c = self.n_classes
        return ThreeBodyParams(np.zeros((self.n_sites, 2), dtype=complex),
                               np.zeros(c, dtype=complex),
                               np.zeros((c, c), dtype=complex))

    def to_vector(self, p: ThreeBodyParams) -> np.ndarray:
        return np.concatenate([p.mf[:, 0], p.mf[:, 1], p.jastrow,
                               p.w3.ravel()])

    def from_vector(self, v: np.ndarray) -> ThreeBodyParams:
        n, c = self.n_sites, self.n_classes
        mf = np.stack([v[:n], v[n:2 * n]], axis=1)
        return ThreeBodyParams(mf.astype(complex),
                               v[2 * n:2 * n + c].astype(complex),
                               v[2 * n + c:].reshape(c, c).astype(complex))

    def _triple_products(self, sig: np.ndarray) -> np.ndarray:
        return sig[:, self._ti] * sig[:, self._tj] * sig[:, self._tk]

    def log_amplitude(self, p: ThreeBodyParams,
                      configs: np.ndarray) -> np.ndarray:
        base = JastrowMeanField.log_amplitude(
            self, JmfParams(p.mf, p.jastrow), configs)
        sig = _as_sigma(configs)
        trip = self._triple_products(sig)
        return base + trip @ p.w3.ravel()[self._triple_slot]

    def log_derivatives(self, p: ThreeBodyParams,
                        configs: np.ndarray) -> np.ndarray:
        configs = np.atleast_2d(np.asarray(configs))
        self._check_support(p.mf, configs)
        m = configs.shape[0]
        sig = _as_sigma(configs)
        c = self.n_classes
        d = np.empty((m, self.n_params), dtype=complex)
        n = self.n_sites
        d[:, :n] = configs == 0
        d[:, n:2 * n] = configs == 1
        d[:, 2 * n:2 * n + c] = self._class_pair_sums(sig)
        trip = self._triple_products(sig)
        slots = np.zeros((m, c * c))
        np.add.at(slots, (slice(None), self._triple_slot), trip)
        d[:, 2 * n + c:] = slots
        return d

    def embed_jmf(self, p: JmfParams) -> ThreeBodyParams:
        c = self.n_classes
        return ThreeBodyParams(p.mf.copy(), p.jastrow.copy(),
                               np.zeros((c, c), dtype=complex))


def rvb_limit_params(model: JastrowMeanField, w: float) -> JmfParams:
    """Parameters whose state approaches the equal-weight dimer liquid.

    ``w`` must be negative; amplitudes carry a factor exp((w/2) * defect)
    where defect counts squared deviations of each kagome vertex from single
    occupancy, so every perfect covering has equal weight and each defect is
    suppressed by e^w.  Couplings: (w/4) on every vertex-sharing distance
    class, zero elsewhere, and a mean field -(w/4)(z_i - 2) sigma_i with z_i
    the number of sites sharing a vertex with i.
    """
    if w >= 0:
        raise ValueError("the dimer-liquid construction needs w < 0")
    lat = model.lat
    chi = vertex_sharing_matrix(lat)
    share = np.zeros(model.n_classes, dtype=bool)
    for c in range(model.n_classes):
        mask = model.dist.class_of == c
        vals = np.unique(chi[mask])
        if len(vals) != 1:
            raise AssertionError(
                "vertex sharing is not constant within a distance class; "
                "the class-invariant construction does not apply")
        share[c] = bool(vals[0])
    z = chi.sum(axis=1)
    p = model.init_params()
    if not isinstance(p, JmfParams):
        raise TypeError("the dimer-liquid construction targets the "
                        "class-invariant ansatz")
    p.jastrow[share] = w / 4.0
    # sigma = +1 at occupation 0
    p.mf[:, 0] = -(w / 4.0) * (z - 2)
    p.mf[:, 1] = +(w / 4.0) * (z - 2)
    return p


def uniform_params(model: JastrowMeanField):
    """All couplings zero: the uniform superposition over the restricted space."""
    return model.init_params()


# -- checkpointing -------------------------------------------------------------

_PARAM_KINDS = {
    "jmf": (JmfParams, ("mf", "jastrow")),
    "dense": (DenseJastrowParams, ("mf", "w")),
    "three-body": (ThreeBodyParams, ("mf", "jastrow", "w3")),
}


def save_params(path, p) -> None:
    """Bit-exact parameter checkpoint (npz, versioned)."""
    for kind, (cls, fields) in _PARAM_KINDS.items():
        if type(p) is cls:
            arrays = {f: np.asarray(getattr(p, f), dtype=complex)
                      for f in fields}
            np.savez(path, kind=np.array(kind), version=np.array(1),
                     **arrays)
            return
    raise TypeError(f"unknown parameter object {type(p).__name__}")


def load_params(path):
    with np.load(path, allow_pickle=False) as data:
        version = int(data["version"])
        if version != 1:
            raise ValueError(f"unsupported checkpoint version {version}")
        kind = str(data["kind"])
        if kind not in _PARAM_KINDS:
            raise ValueError(f"unknown checkpoint kind {kind!r}")
        cls, fields = _PARAM_KINDS[kind]
        return cls(**{f: data[f] for f in fields})


def model_for(kind: str, lat: RubyLattice,
              dist: DistanceTable | None = None) -> JastrowMeanField:
    table = {"jmf": JastrowMeanField, "dense": DenseJastrow,
             "three-body": ThreeBodyJastrow}
    if kind not in table:
        raise ValueError(f"unknown ansatz kind {kind!r}; known: {sorted(table)}")
    return table[kind](lat, dist)
