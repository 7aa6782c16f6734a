"""Configurations on the blockade-restricted space.

A configuration assigns each site an occupation n in {0, 1}.  Strong
blockade inside each triangle keeps at most one of its three sites excited,
so a restricted configuration is a word of per-triangle local states

    0 -> all three sites empty,
    j -> the j-th site of the triangle excited (j = 1, 2, 3, ascending
         site order within the triangle),

and the restricted basis index reads that word as a base-4 integer with
triangle 0 as the most significant digit.  The Ising convention is
sigma = 1 - 2 n (empty = +1).
"""

from __future__ import annotations

import numpy as np

from .lattice import RubyLattice, StringPath, q_axis_site


def restricted_dimension(lat: RubyLattice) -> int:
    return 4 ** lat.n_triangles


def sigma_from_n(n: np.ndarray) -> np.ndarray:
    return 1 - 2 * np.asarray(n, dtype=np.int8)


def n_from_sigma(sigma: np.ndarray) -> np.ndarray:
    return ((1 - np.asarray(sigma, dtype=np.int8)) // 2).astype(np.int8)


def is_restricted(lat: RubyLattice, configs: np.ndarray) -> np.ndarray:
    """True where every triangle holds at most one excitation."""
    configs = np.atleast_2d(np.asarray(configs))
    occ = configs[:, lat.triangles].sum(axis=2)
    return (occ <= 1).all(axis=1)


def triangle_digits(lat: RubyLattice, configs: np.ndarray) -> np.ndarray:
    """Per-triangle local states of restricted configurations, shape (M, T)."""
    configs = np.atleast_2d(np.asarray(configs, dtype=np.int8))
    tri = configs[:, lat.triangles]  # (M, T, 3)
    if (tri.sum(axis=2) > 1).any():
        raise ValueError("configuration violates the blockade restriction")
    return (tri * np.array([1, 2, 3], dtype=np.int8)).sum(axis=2).astype(np.int8)


def digits_to_configs(lat: RubyLattice, digits: np.ndarray) -> np.ndarray:
    """Inverse of :func:`triangle_digits`."""
    digits = np.atleast_2d(np.asarray(digits))
    m = digits.shape[0]
    configs = np.zeros((m, lat.n_sites), dtype=np.int8)
    for j in range(3):
        mask = digits == j + 1  # (M, T)
        rows, tris = np.nonzero(mask)
        configs[rows, lat.triangles[tris, j]] = 1
    return configs


def config_to_index(lat: RubyLattice, configs: np.ndarray) -> np.ndarray:
    digits = triangle_digits(lat, configs).astype(np.int64)
    t = lat.n_triangles
    weights = 4 ** np.arange(t - 1, -1, -1, dtype=np.int64)
    return digits @ weights


def index_to_config(lat: RubyLattice, indices: np.ndarray) -> np.ndarray:
    return digits_to_configs(lat, index_to_digits(lat, indices))


def index_to_digits(lat: RubyLattice, indices: np.ndarray) -> np.ndarray:
    indices = np.atleast_1d(np.asarray(indices, dtype=np.int64))
    t = lat.n_triangles
    weights = 4 ** np.arange(t - 1, -1, -1, dtype=np.int64)
    return ((indices[:, None] // weights[None, :]) % 4).astype(np.int8)


def all_restricted_configs(lat: RubyLattice) -> np.ndarray:
    """Every restricted configuration, ordered by basis index.

    Materializes a (4^T, N) array; intended for exact small-system work.
    """
    dim = restricted_dimension(lat)
    if dim * lat.n_sites > 2 * 10 ** 9:
        raise ValueError("restricted basis too large to materialize")
    return index_to_config(lat, np.arange(dim))


def random_restricted_configs(lat: RubyLattice, n_samples: int,
                              rng: np.random.Generator) -> np.ndarray:
    digits = rng.integers(0, 4, size=(n_samples, lat.n_triangles),
                          dtype=np.int64).astype(np.int8)
    return digits_to_configs(lat, digits)


# -- kagome-vertex (dimer) bookkeeping -----------------------------------------


def vertex_occupancy(lat: RubyLattice, configs: np.ndarray) -> np.ndarray:
    """Number of occupied links at each kagome vertex, shape (M, V)."""
    configs = np.atleast_2d(np.asarray(configs, dtype=np.int8))
    m = configs.shape[0]
    occ = np.zeros((m, lat.n_vertices), dtype=np.int8)
    for col in range(2):
        np.add.at(occ, (slice(None), lat.site_vertices[:, col]), configs)
    return occ


def classify_vertices(lat: RubyLattice, configs: np.ndarray) -> dict[str, np.ndarray]:
    """Fractions of monomer (0 links), matched (1) and overfull (>1) vertices."""
    occ = vertex_occupancy(lat, configs)
    v = occ.shape[1]
    return {
        "monomer": (occ == 0).sum(axis=1) / v,
        "dimer": (occ == 1).sum(axis=1) / v,
        "double": (occ >= 2).sum(axis=1) / v,
    }


def is_perfect_covering(lat: RubyLattice, configs: np.ndarray) -> np.ndarray:
    """True where every kagome vertex touches exactly one occupied link."""
    occ = vertex_occupancy(lat, configs)
    return (occ == 1).all(axis=1)


def enumerate_perfect_coverings(lat: RubyLattice,
                                limit: int = 10 ** 6) -> np.ndarray:
    """All configurations whose occupied links perfectly match the vertices.

    Depth-first over triangles with per-vertex pruning; raises once more
    than ``limit`` coverings are found.
    """
    t_count = lat.n_triangles
    v_count = lat.n_vertices
    # per (triangle, local state): vertices gaining a link
    gains = []
    for t in range(t_count):
        per_state = [()]
        for s in lat.triangles[t]:
            per_state.append(tuple(int(v) for v in lat.site_vertices[s]))
        gains.append(per_state)
    # vertices whose last adjacent triangle is t (must be matched once done)
    last_tri = np.zeros(v_count, dtype=np.int64)
    for v, tris in enumerate(lat.vertex_triangles):
        last_tri[v] = max(tris)
    finish = [np.flatnonzero(last_tri == t) for t in range(t_count)]

    counts = np.zeros(v_count, dtype=np.int8)
    digits = np.zeros(t_count, dtype=np.int8)
    found: list[np.ndarray] = []

    def descend(t: int):
        if t == t_count:
            found.append(digits.copy())
            if len(found) > limit:
                raise ValueError("more perfect coverings than the stated limit")
            return
        for state in range(4):
            vs = gains[t][state]
            if any(counts[v] >= 1 for v in vs):
                continue
            for v in vs:
                counts[v] += 1
            if all(counts[v] == 1 for v in finish[t]):
                digits[t] = state
                descend(t + 1)
            for v in vs:
                counts[v] -= 1
        digits[t] = 0

    descend(0)
    if not found:
        return np.zeros((0, lat.n_sites), dtype=np.int8)
    return digits_to_configs(lat, np.array(found))


# -- string operators on configurations ----------------------------------------


def parity_eigenvalue(lat: RubyLattice, path: StringPath,
                      configs: np.ndarray) -> np.ndarray:
    """Product of (1 - 2 n_i) over the crossed sites of a P-kind path."""
    if path.kind != "P":
        raise ValueError("parity eigenvalues exist only for P-kind paths")
    configs = np.atleast_2d(np.asarray(configs))
    return (1 - 2 * configs[:, list(path.sites)]).prod(axis=1)


def apply_q_string(lat: RubyLattice, path: StringPath,
                   configs: np.ndarray) -> np.ndarray:
    """Map configurations through a Q-kind path.

    Each crossed triangle undergoes the permutation of its four local
    states that exchanges the empty state with the axis site excited and
    the entry-side excitation with the exit-side one.  The map is an
    involution and preserves the blockade restriction.
    """
    if path.kind != "Q":
        raise ValueError("only Q-kind paths act by rearranging occupations")
    configs = np.atleast_2d(np.asarray(configs, dtype=np.int8))
    if not is_restricted(lat, configs).all():
        raise ValueError("Q strings are defined on restricted configurations")
    out = configs.copy()
    for (t, entry, exit_) in path.triangles:
        axis = q_axis_site(lat, t, entry, exit_)
        occ_axis = configs[:, axis] == 1
        occ_entry = configs[:, entry] == 1
        occ_exit = configs[:, exit_] == 1
        empty = ~(occ_axis | occ_entry | occ_exit)
        out[empty, axis] = 1
        out[occ_axis, axis] = 0
        out[occ_entry, entry] = 0
        out[occ_entry, exit_] = 1
        out[occ_exit, exit_] = 0
        out[occ_exit, entry] = 1
    return out


def encode_config(config: np.ndarray) -> str:
    return "".join("1" if x else "0" for x in np.asarray(config).ravel())


def decode_config(text: str) -> np.ndarray:
    if set(text) - {"0", "1"}:
        raise ValueError("configuration strings contain only 0 and 1")
    return np.array([1 if c == "1" else 0 for c in text], dtype=np.int8)
