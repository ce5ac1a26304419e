"""Plant model: LTI dynamics with per-agent input/output partitions and
ellipsoidally bounded disturbances."""

from dataclasses import dataclass, field

import numpy as np

from .linalg import as_matrix, check_symmetric, min_eig_margin


class PlantError(ValueError):
    pass


def _check_pd(m, name: str) -> np.ndarray:
    sym = check_symmetric(m)
    if min_eig_margin(sym) <= 0:
        raise PlantError(f"{name} must be positive definite")
    return sym


@dataclass(frozen=True)
class PlantModel:
    """State matrices A, B, C with agent partitions of inputs and outputs, and
    the disturbance ellipsoid shapes Q (process) and R (measurement)."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    input_partition: tuple
    output_partition: tuple
    q: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        a = as_matrix(self.a)
        b = as_matrix(self.b)
        c = as_matrix(self.c)
        if a.shape[0] != a.shape[1]:
            raise PlantError("A must be square")
        n = a.shape[0]
        if b.shape[0] != n or c.shape[1] != n:
            raise PlantError("B rows and C columns must match the state dimension")
        pin = tuple(int(p) for p in self.input_partition)
        pout = tuple(int(m) for m in self.output_partition)
        if len(pin) != len(pout):
            raise PlantError("input and output partitions must list the same agents")
        if sum(pin) != b.shape[1]:
            raise PlantError("input partition does not sum to the number of inputs")
        if sum(pout) != c.shape[0]:
            raise PlantError("output partition does not sum to the number of outputs")
        if any(p <= 0 for p in pin) or any(m <= 0 for m in pout):
            raise PlantError("partition blocks must be positive")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "input_partition", pin)
        object.__setattr__(self, "output_partition", pout)
        object.__setattr__(self, "q", _check_pd(self.q, "Q"))
        object.__setattr__(self, "r", _check_pd(self.r, "R"))
        if self.q.shape[0] != n:
            raise PlantError("Q must be n x n")
        if self.r.shape[0] != c.shape[0]:
            raise PlantError("R must be m x m")

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def n_agents(self) -> int:
        return len(self.input_partition)

    @property
    def p(self) -> int:
        return self.b.shape[1]

    @property
    def m(self) -> int:
        return self.c.shape[0]

    def _input_offset(self, i: int) -> int:
        return sum(self.input_partition[:i])

    def _output_offset(self, i: int) -> int:
        return sum(self.output_partition[:i])

    def b_block(self, i: int) -> np.ndarray:
        o = self._input_offset(i)
        return self.b[:, o:o + self.input_partition[i]]

    def c_block(self, i: int) -> np.ndarray:
        o = self._output_offset(i)
        return self.c[o:o + self.output_partition[i], :]

    def output_selector(self, i: int) -> np.ndarray:
        """Row selector picking agent i's measurements out of the stacked output."""
        sel = np.zeros((self.output_partition[i], self.m))
        o = self._output_offset(i)
        sel[:, o:o + self.output_partition[i]] = np.eye(self.output_partition[i])
        return sel

    def split_output(self, y: np.ndarray) -> list:
        return [self.output_selector(i) @ y for i in range(self.n_agents)]


@dataclass
class PlantState:
    x: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).reshape(-1)
        if not np.all(np.isfinite(self.x)):
            raise PlantError("state has non-finite entries")


def sample_disturbance(shape, mode: str, rng: np.random.Generator) -> np.ndarray:
    """Draw d with d^T shape d <= 1: uniformly inside the ellipsoid, or on its boundary."""
    sym = _check_pd(shape, "disturbance shape")
    dim = sym.shape[0]
    u = rng.standard_normal(dim)
    u /= np.linalg.norm(u)
    if mode == "boundary":
        radius = 1.0
    elif mode == "interior":
        radius = rng.uniform() ** (1.0 / dim)
    else:
        raise PlantError(f"unknown disturbance mode {mode!r}")
    chol = np.linalg.cholesky(sym)
    return np.linalg.solve(chol.T, u) * radius


def apply_setpoint_jump(state: PlantState, jump) -> PlantState:
    """Shift the physical state by the given offset; observer estimates are untouched."""
    jump = np.asarray(jump, dtype=float).reshape(-1)
    if jump.shape != state.x.shape:
        raise PlantError("jump dimension does not match the state")
    return PlantState(x=state.x + jump, t=state.t)
