"""Physics observables on exact state vectors or sampled variational states.

Every observable is addressable by name (e.g. ``P:hexagon``, ``Q_FM``,
``logical:ZZ:2``, ``tee:default``) and evaluates through a single context
object that carries either an exact engine plus state vector or an ansatz
plus Monte Carlo samples.  Loop and vertex quantities are averaged over
all bulk instances of their template.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import state as st
from .lattice import RubyLattice, StringPath, make_string, make_tripartition
from .sampler import SampleSet, estimate_local, run_mcmc, swap_ratios


# -- evaluation context ----------------------------------------------------------


@dataclass
class ObsValue:
    name: str
    mean: float
    stderr: float
    n_samples: int
    defined: bool = True


@dataclass
class EvalContext:
    """Everything an observable may need; leave the unused branch empty.

    Exact branch: ``eng`` (ExactEngine) and ``psi``.  Sampled branch:
    ``model``, ``params``, ``samples`` (SampleSet) and, for the energy,
    ``ham``.  ``omega``/``delta`` are the instantaneous drive values.
    """
    lat: RubyLattice
    t: float | None = None
    omega: float | None = None
    delta: float | None = None
    disorder: object = None
    eng: object = None
    psi: np.ndarray | None = None
    model: object = None
    params: object = None
    samples: SampleSet | None = None
    ham: object = None
    tripartition: object = None
    replica: dict | None = None
    seed: int | None = None

    @property
    def is_exact(self) -> bool:
        return self.psi is not None

    def check_sampled(self):
        if self.model is None or self.params is None or self.samples is None:
            raise ValueError("context provides neither an exact state nor "
                             "model/params/samples")


# -- local estimators -------------------------------------------------------------


def eval_p(lat: RubyLattice, path: StringPath,
           configs: np.ndarray) -> np.ndarray:
    """Parity eigenvalues of a P-kind string, one per configuration."""
    return st.parity_eigenvalue(lat, path, configs)


def eval_q_loc(model, params, lat: RubyLattice, path: StringPath,
               configs: np.ndarray,
               log_psi: np.ndarray | None = None) -> np.ndarray:
    """psi(Q sigma)/psi(sigma) for a Q-kind path; stays in the restricted space."""
    if log_psi is None:
        log_psi = model.log_amplitude(params, configs)
    mapped = st.apply_q_string(lat, path, configs)
    return np.exp(model.log_amplitude(params, mapped) - log_psi)


def string_expectation_exact(eng, psi: np.ndarray, path: StringPath) -> float:
    if path.kind == "P":
        return float(eng.parity_expectation(psi, path))
    return float(eng.q_expectation(psi, path).real)


def fm_order(open_mean: float, closed_mean: float,
             threshold: float = 1e-3) -> tuple[float, bool]:
    """Open-string expectation over the square root of its doubled loop.

    Undefined (NaN) once the loop expectation is not bounded away from
    zero, where the ratio loses meaning.
    """
    if closed_mean <= threshold:
        return float("nan"), False
    return open_mean / math.sqrt(closed_mean), True


# -- observable implementations ---------------------------------------------------


class Observable:
    name: str

    def eval(self, ctx: EvalContext) -> ObsValue:
        raise NotImplementedError


def _born_weights(eng, psi):
    w = np.abs(psi) ** 2
    return w / w.sum()


class DiagonalObservable(Observable):
    """Any per-configuration real function, bulk-averaged already inside fn."""

    def __init__(self, name, fn):
        self.name = name
        self.fn = fn

    def eval(self, ctx: EvalContext) -> ObsValue:
        if ctx.is_exact:
            w = _born_weights(ctx.eng, ctx.psi)
            vals = self.fn(ctx.lat, ctx.eng.occupations)
            return ObsValue(self.name, float(w @ vals), 0.0, len(w))
        ctx.check_sampled()
        cfg, _ = ctx.samples.flat()
        vals = np.asarray(self.fn(ctx.lat, cfg), dtype=float)
        est = estimate_local(vals.reshape(ctx.samples.configs.shape[:2]))
        return ObsValue(self.name, float(est.mean.real), est.stderr,
                        est.n_samples)


class StringAverageObservable(Observable):
    """Mean expectation of a family of string paths (bulk instances)."""

    def __init__(self, name, paths):
        self.name = name
        self.paths = list(paths)
        if not self.paths:
            raise ValueError(f"no bulk instances available for {name}")

    def eval(self, ctx: EvalContext) -> ObsValue:
        if ctx.is_exact:
            vals = [string_expectation_exact(ctx.eng, ctx.psi, p)
                    for p in self.paths]
            return ObsValue(self.name, float(np.mean(vals)), 0.0,
                            len(ctx.psi))
        ctx.check_sampled()
        cfg, logs = ctx.samples.flat()
        per_path = []
        for p in self.paths:
            if p.kind == "P":
                per_path.append(eval_p(ctx.lat, p, cfg).astype(float))
            else:
                per_path.append(eval_q_loc(ctx.model, ctx.params, ctx.lat, p,
                                           cfg, log_psi=logs).real)
        vals = np.mean(per_path, axis=0)
        est = estimate_local(vals.reshape(ctx.samples.configs.shape[:2]))
        return ObsValue(self.name, float(est.mean.real), est.stderr,
                        est.n_samples)


class FmObservable(Observable):
    """Fredenhagen-Marcu ratio, averaged over bulk hexagons and starts."""

    def __init__(self, name, kind, lat, threshold=1e-3):
        self.name = name
        self.kind = kind
        self.threshold = threshold
        hexes = lat.bulk_hexagons()
        if len(hexes) == 0:
            raise ValueError("no bulk hexagons on this lattice")
        self.open_paths = [
            make_string(lat, kind, "half-hexagon-open", hexagon=h, start=s)
            for h in hexes for s in range(6)]
        self.closed_paths = [make_string(lat, kind, "hexagon-loop", hexagon=h)
                             for h in hexes]

    def eval(self, ctx: EvalContext) -> ObsValue:
        if ctx.is_exact:
            op = np.mean([string_expectation_exact(ctx.eng, ctx.psi, p)
                          for p in self.open_paths])
            cl = np.mean([string_expectation_exact(ctx.eng, ctx.psi, p)
                          for p in self.closed_paths])
            val, ok = fm_order(float(op), float(cl), self.threshold)
            return ObsValue(self.name, val, 0.0, len(ctx.psi), defined=ok)
        ctx.check_sampled()
        cfg, logs = ctx.samples.flat()
        shape = ctx.samples.configs.shape[:2]

        def path_values(p):
            if p.kind == "P":
                return eval_p(ctx.lat, p, cfg).astype(float)
            return eval_q_loc(ctx.model, ctx.params, ctx.lat, p, cfg,
                              log_psi=logs).real

        op = np.mean([path_values(p) for p in self.open_paths],
                     axis=0).reshape(shape)
        cl = np.mean([path_values(p) for p in self.closed_paths],
                     axis=0).reshape(shape)
        # per-chain ratios keep the numerator/denominator correlation
        op_k, cl_k = op.mean(axis=1), cl.mean(axis=1)
        if cl_k.mean() <= self.threshold:
            return ObsValue(self.name, float("nan"), float("nan"),
                            op.size, defined=False)
        fm_k = op_k / np.sqrt(np.maximum(cl_k, 1e-12))
        k = len(fm_k)
        err = fm_k.std(ddof=1) / math.sqrt(k) if k > 1 else 0.0
        return ObsValue(self.name, float(fm_k.mean()), float(err), op.size)


class EnergyObservable(Observable):
    name = "energy"

    def eval(self, ctx: EvalContext) -> ObsValue:
        if ctx.omega is None or ctx.delta is None:
            raise ValueError("energy needs drive values in the context")
        if ctx.is_exact:
            val = ctx.eng.energy(ctx.psi, ctx.omega, ctx.delta, ctx.disorder)
            return ObsValue(self.name, float(val.real), 0.0, len(ctx.psi))
        ctx.check_sampled()
        if ctx.ham is None:
            raise ValueError("energy needs the Hamiltonian in the context")
        cfg, logs = ctx.samples.flat()
        el = ctx.ham.local_energy(ctx.model, ctx.params, cfg, ctx.omega,
                                  ctx.delta, disorder=ctx.disorder,
                                  log_psi=logs)
        est = estimate_local(el.reshape(ctx.samples.configs.shape[:2]))
        return ObsValue(self.name, float(est.mean.real), est.stderr,
                        est.n_samples)


class CompositeLogicalObservable(Observable):
    """<Z1 X Zj>: two diagonal parities around one basis permutation."""

    def __init__(self, name, x_path, z1_path, zj_path):
        self.name = name
        self.x_path = x_path
        self.z1 = z1_path
        self.zj = zj_path

    def _prefactor(self, lat, configs, mapped):
        return (eval_p(lat, self.zj, configs).astype(float)
                * eval_p(lat, self.z1, mapped).astype(float))

    def eval(self, ctx: EvalContext) -> ObsValue:
        if ctx.is_exact:
            occ = ctx.eng.occupations
            mapped = st.apply_q_string(ctx.lat, self.x_path, occ)
            idx = st.config_to_index(ctx.lat, mapped)
            pref = self._prefactor(ctx.lat, occ, mapped)
            norm = np.vdot(ctx.psi, ctx.psi).real
            val = np.vdot(ctx.psi[idx], pref * ctx.psi).real / norm
            return ObsValue(self.name, float(val), 0.0, len(ctx.psi))
        ctx.check_sampled()
        cfg, logs = ctx.samples.flat()
        mapped = st.apply_q_string(ctx.lat, self.x_path, cfg)
        pref = self._prefactor(ctx.lat, cfg, mapped)
        ratios = np.exp(ctx.model.log_amplitude(ctx.params, mapped) - logs)
        vals = (pref * ratios).real
        est = estimate_local(vals.reshape(ctx.samples.configs.shape[:2]))
        return ObsValue(self.name, float(est.mean.real), est.stderr,
                        est.n_samples)


# -- topological entanglement entropy ---------------------------------------------


@dataclass
class TeeReport:
    entropies: dict
    gamma: float
    gamma_stderr: float
    ci: tuple
    n_pairs: int
    defined: bool = True


def tee_kitaev_preskill(entropies: dict) -> float:
    """Combine the seven subregion entropies; positive for Z2 order."""
    s = {k: (v[0] if isinstance(v, tuple) else float(v))
         for k, v in entropies.items()}
    return -(s["A"] + s["B"] + s["C"] - s["AB"] - s["BC"] - s["CA"]
             + s["ABC"])


def tee_report(ctx: EvalContext, n_boot: int = 1024) -> TeeReport:
    """Seven-region Renyi-2 entropies and their Kitaev-Preskill combination.

    Sampled estimates bootstrap all regions jointly over the shared replica
    pairs, so the correlations between subregion entropies propagate into
    the gamma interval.
    """
    tri = ctx.tripartition
    if tri is None:
        tri = make_tripartition(ctx.lat)
    labels = tri.labels
    if ctx.is_exact:
        ent = {lab: (ctx.eng.renyi2(ctx.psi, tri.region(lab)), 0.0)
               for lab in labels}
        gamma = tee_kitaev_preskill(ent)
        return TeeReport(ent, gamma, 0.0, (gamma, gamma), len(ctx.psi))
    ctx.check_sampled()
    rep = dict(ctx.replica or {})
    seed = rep.pop("seed", ctx.seed)
    n_boot = rep.pop("n_boot", n_boot)
    rng = np.random.default_rng(seed)
    budget = dict(n_chains=rep.pop("n_chains", 16),
                  n_samples=rep.pop("n_samples", 256),
                  n_burnin=rep.pop("n_burnin", 64),
                  thin=rep.pop("thin", 4))
    if rep:
        raise ValueError(f"unknown replica options: {sorted(rep)}")
    sets = [run_mcmc(ctx.model, ctx.params, rng=rng, **budget)
            for _ in range(2)]
    ca, la = sets[0].flat()
    cb, lb = sets[1].flat()
    m = min(len(ca), len(cb))
    ratios = {}
    for lab in labels:
        region = tri.region(lab)
        ratios[lab] = swap_ratios(ctx.model, ctx.params, region,
                                  ca[:m], la[:m], cb[:m], lb[:m]).real
    means = {lab: r.mean() for lab, r in ratios.items()}
    if min(means.values()) <= 0:
        ent = {lab: (float("nan"), float("nan")) for lab in labels}
        return TeeReport(ent, float("nan"), float("nan"),
                         (float("nan"), float("nan")), m, defined=False)
    idx = rng.integers(0, m, size=(n_boot, m))
    boot_gamma = np.zeros(n_boot)
    boot_ent = {lab: np.zeros(n_boot) for lab in labels}
    for lab in labels:
        bm = ratios[lab][idx].mean(axis=1)
        bm = np.maximum(bm, 1e-300)
        boot_ent[lab] = -np.log(bm)
    for lab, sign in (("A", 1), ("B", 1), ("C", 1), ("AB", -1), ("BC", -1),
                      ("CA", -1), ("ABC", 1)):
        boot_gamma -= sign * boot_ent[lab]
    ent = {lab: (-math.log(means[lab]), float(boot_ent[lab].std(ddof=0)))
           for lab in labels}
    gamma = tee_kitaev_preskill(ent)
    lo, hi = np.quantile(boot_gamma, [0.16, 0.84])
    return TeeReport(ent, gamma, float(boot_gamma.std(ddof=0)),
                     (float(lo), float(hi)), m)


class TeeObservable(Observable):
    name = "tee:default"

    def eval(self, ctx: EvalContext) -> ObsValue:
        rep = tee_report(ctx)
        return ObsValue(self.name, rep.gamma, rep.gamma_stderr, rep.n_pairs,
                        defined=rep.defined)


# -- registry ---------------------------------------------------------------------


def _density(lat, configs):
    return configs.mean(axis=1)


def _vertex_fraction(which):
    def fn(lat, configs):
        return st.classify_vertices(lat, configs)[which]
    return fn


def _vertex_paths(lat):
    return [make_string(lat, "P", "dual-loop", vertex=int(v))
            for v in lat.bulk_vertices()]


def _hexagon_paths(lat, kind):
    return [make_string(lat, kind, "hexagon-loop", hexagon=int(h))
            for h in lat.bulk_hexagons()]


def _logical_pair(lat, j):
    z1 = make_string(lat, "P", "logical-Z", j=1)
    zj = make_string(lat, "P", "logical-Z", j=j)
    return z1, zj


def _parse_j(token):
    if token.startswith("j="):
        token = token[2:]
    return int(token)


def resolve(name: str, lat: RubyLattice) -> Observable:
    """Look up an observable by its registry name."""
    if name == "density":
        return DiagonalObservable(name, _density)
    if name == "energy":
        return EnergyObservable()
    if name.startswith("vertex:"):
        which = name.split(":", 1)[1]
        if which not in ("monomer", "dimer", "double"):
            raise KeyError(f"unknown vertex class {which!r}")
        return DiagonalObservable(name, _vertex_fraction(which))
    if name == "P:vertex":
        return StringAverageObservable(name, _vertex_paths(lat))
    if name == "P:hexagon":
        return StringAverageObservable(name, _hexagon_paths(lat, "P"))
    if name == "Q:hexagon":
        return StringAverageObservable(name, _hexagon_paths(lat, "Q"))
    if name == "P_FM":
        return FmObservable(name, "P", lat)
    if name == "Q_FM":
        return FmObservable(name, "Q", lat)
    if name == "logical:X":
        return StringAverageObservable(
            name, [make_string(lat, "Q", "logical-X")])
    if name.startswith("logical:ZXZ:"):
        j = _parse_j(name.split(":")[2])
        z1, zj = _logical_pair(lat, j)
        x = make_string(lat, "Q", "logical-X")
        return CompositeLogicalObservable(name, x, z1, zj)
    if name.startswith("logical:ZZ:"):
        j = _parse_j(name.split(":")[2])
        z1, zj = _logical_pair(lat, j)

        def zz(lt, configs, _a=z1, _b=zj):
            return (eval_p(lt, _a, configs) * eval_p(lt, _b, configs)
                    ).astype(float)

        return DiagonalObservable(name, zz)
    if name.startswith("logical:Z:"):
        j = _parse_j(name.split(":")[2])
        path = make_string(lat, "P", "logical-Z", j=j)
        return StringAverageObservable(name, [path])
    if name == "tee:default":
        return TeeObservable()
    raise KeyError(f"unknown observable {name!r}")


def default_names(lat: RubyLattice) -> list[str]:
    """Observables every evolution run records by default."""
    names = ["density", "energy", "vertex:monomer", "vertex:dimer",
             "vertex:double", "P:vertex", "P:hexagon", "Q:hexagon",
             "P_FM", "Q_FM"]
    if lat.n_holes:
        names += ["logical:X", "logical:Z:1", "logical:ZZ:2",
                  "logical:ZXZ:2"]
    return names
