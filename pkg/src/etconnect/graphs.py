"""Communication graphs: Laplacians, connectivity, the spectral split used by the
full-connection error coordinates, and enumeration of connection configurations."""

from dataclasses import dataclass, field

import numpy as np

from .linalg import StructuralError, sym_eig


class GraphError(ValueError):
    pass


def _check_adjacency(adjacency) -> np.ndarray:
    a = np.asarray(adjacency)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise GraphError(f"adjacency must be square, got {a.shape}")
    if not np.all((a == 0) | (a == 1)):
        raise GraphError("adjacency entries must be 0 or 1")
    if np.any(np.diag(a) != 0):
        raise GraphError("adjacency must have a zero diagonal")
    if np.any(a != a.T):
        raise GraphError("adjacency must be symmetric (undirected graph)")
    return a.astype(int)


def laplacian(adjacency) -> np.ndarray:
    """Graph Laplacian: diagonal holds degrees, off-diagonal entries are -a_ij."""
    a = _check_adjacency(adjacency)
    return np.diag(a.sum(axis=1)) - a


def is_connected(adjacency) -> bool:
    """Breadth-first reachability from agent 0 to every other agent."""
    a = _check_adjacency(adjacency)
    n = a.shape[0]
    if n == 1:
        return True
    seen = np.zeros(n, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        i = stack.pop()
        for j in np.nonzero(a[i])[0]:
            if not seen[j]:
                seen[j] = True
                stack.append(j)
    return bool(seen.all())


def laplacian_key(lap: np.ndarray) -> bytes:
    """Hashable identity of a connection configuration (its Laplacian)."""
    return np.asarray(lap, dtype=np.int64).tobytes()


@dataclass(frozen=True)
class CommGraph:
    """Underlying undirected communication graph, required to be connected."""

    adjacency: np.ndarray

    def __post_init__(self):
        a = _check_adjacency(self.adjacency)
        object.__setattr__(self, "adjacency", a)
        if not is_connected(a):
            raise GraphError("underlying communication graph must be connected")

    @property
    def n_agents(self) -> int:
        return self.adjacency.shape[0]

    @property
    def full_laplacian(self) -> np.ndarray:
        return laplacian(self.adjacency)

    def neighbors(self, i: int) -> np.ndarray:
        return np.nonzero(self.adjacency[i])[0]

    def edges(self) -> list:
        n = self.n_agents
        return [(i, j) for i in range(n) for j in range(i + 1, n) if self.adjacency[i, j]]

    def edge_laplacians(self) -> list:
        """Single-edge Laplacians; every induced configuration Laplacian is a sum of these."""
        out = []
        for i, j in self.edges():
            lap = np.zeros((self.n_agents, self.n_agents), dtype=int)
            lap[i, i] = lap[j, j] = 1
            lap[i, j] = lap[j, i] = -1
            out.append(lap)
        return out


@dataclass(frozen=True)
class ConnectionConfig:
    """Subset of connected agents together with the Laplacian it induces on the
    underlying graph.  Configurations with equal Laplacians are interchangeable."""

    connected_set: frozenset
    laplacian: np.ndarray

    @property
    def key(self) -> bytes:
        return laplacian_key(self.laplacian)

    @property
    def is_zero(self) -> bool:
        return not self.laplacian.any()


def induced_config(underlying: CommGraph, connected_set) -> ConnectionConfig:
    members = frozenset(int(i) for i in connected_set)
    n = underlying.n_agents
    for i in members:
        if not 0 <= i < n:
            raise GraphError(f"agent index {i} out of range for N={n}")
    a = np.zeros((n, n), dtype=int)
    for i in members:
        for j in members:
            if i != j and underlying.adjacency[i, j]:
                a[i, j] = 1
    return ConnectionConfig(connected_set=members, laplacian=np.diag(a.sum(axis=1)) - a)


def full_config(underlying: CommGraph) -> ConnectionConfig:
    return induced_config(underlying, range(underlying.n_agents))


def zero_config(underlying: CommGraph) -> ConnectionConfig:
    return induced_config(underlying, ())


def enumerate_configs(underlying: CommGraph, cap: int = 12) -> list:
    """All connection configurations with distinct Laplacians, zero config first.

    Subsets inducing equal Laplacians (e.g. the empty set and all singletons)
    collapse to one entry, so the count is at most 2^N - N.
    """
    n = underlying.n_agents
    if n > cap:
        raise GraphError(
            f"enumerating 2^{n} connection subsets exceeds the cap ({cap}); "
            "use worst-case mode instead"
        )
    seen = {}
    for bits in range(2 ** n):
        members = [i for i in range(n) if bits >> i & 1]
        cfg = induced_config(underlying, members)
        seen.setdefault(cfg.key, cfg)
    configs = list(seen.values())
    configs.sort(key=lambda c: (int(np.trace(c.laplacian)), c.key))
    return configs


@dataclass(frozen=True)
class SpectralSplit:
    """Orthonormal split of R^N into the all-ones direction and its complement,
    diagonalizing the full-connection Laplacian on the complement."""

    s: np.ndarray
    lambda_plus: np.ndarray
    u: np.ndarray
    laplacian: np.ndarray = field(repr=False)


def spectral_split(underlying: CommGraph) -> SpectralSplit:
    lap = underlying.full_laplacian.astype(float)
    eig = sym_eig(lap)
    n = underlying.n_agents
    if n > 1 and eig.values[1] <= 1e-10 * max(1.0, eig.values[-1]):
        raise StructuralError("zero eigenvalue not simple: graph is disconnected")
    s = eig.vectors[:, 1:]
    lambda_plus = eig.values[1:].copy()
    ones_row = np.full((1, n), 1.0 / np.sqrt(n))
    u = np.vstack([ones_row, s.T])
    return SpectralSplit(s=s, lambda_plus=lambda_plus, u=u, laplacian=lap)
