"""Gain synthesis (state feedback, global and local observers, coupling gain)
and assembly of the stacked error-dynamics matrices."""

from dataclasses import dataclass

import numpy as np
import scipy.signal

from .graphs import CommGraph, ConnectionConfig, SpectralSplit
from .linalg import as_matrix, kron
from .plant import PlantModel


class SynthesisError(ValueError):
    pass


def _char_poly(poles) -> np.ndarray:
    return np.real(np.poly(np.asarray(poles, dtype=float)))


def _acker(a: np.ndarray, b: np.ndarray, poles) -> np.ndarray:
    n = a.shape[0]
    ctrb = np.hstack([np.linalg.matrix_power(a, k) @ b for k in range(n)])
    if np.linalg.matrix_rank(ctrb) < n:
        raise SynthesisError("pair is not controllable for the requested poles")
    coeffs = _char_poly(poles)
    phi = np.zeros_like(a)
    for c in coeffs:
        phi = phi @ a + c * np.eye(n)
    last_row = np.zeros((1, n))
    last_row[0, -1] = 1.0
    return last_row @ np.linalg.solve(ctrb, phi)


def place_poles(a, b, poles) -> np.ndarray:
    """Gain F such that eig(a + b F) equals the requested poles.

    Square invertible b admits the closed form F = b^{-1} (diag(poles) - a);
    otherwise scipy's Tits-Yang placement is used, with Ackermann as the
    single-input fallback for repeated poles.
    """
    a = as_matrix(a)
    b = as_matrix(b)
    poles = np.sort(np.asarray(poles, dtype=float))
    n = a.shape[0]
    if len(poles) != n:
        raise SynthesisError(f"need {n} poles, got {len(poles)}")
    if b.shape == (n, n) and abs(np.linalg.det(b)) > 1e-12:
        gain = np.linalg.solve(b, np.diag(poles) - a)
    elif b.shape[1] == 1:
        gain = -_acker(a, b, poles)
    else:
        try:
            result = scipy.signal.place_poles(a, b, poles)
        except ValueError as exc:
            raise SynthesisError(str(exc)) from exc
        gain = -result.gain_matrix
    achieved = np.sort(np.linalg.eigvals(a + b @ gain).real)
    scale = max(1.0, np.abs(poles).max())
    if np.abs(achieved - poles).max() > 1e-6 * scale:
        raise SynthesisError(f"pole placement missed targets: {achieved} vs {poles}")
    return gain


def observer_gain_global(a, c, poles) -> np.ndarray:
    """Gain L such that eig(a - L c) equals the requested poles (duality)."""
    a = as_matrix(a)
    c = as_matrix(c)
    gain = place_poles(a.T, c.T, poles)
    return -gain.T


@dataclass(frozen=True)
class ObsDecomposition:
    """Orthogonal similarity splitting (A, C_i) into observable and unobservable parts."""

    t_i: np.ndarray
    a_o: np.ndarray
    c_o: np.ndarray
    a_21: np.ndarray
    a_obar: np.ndarray
    obs_dim: int


def obs_decompose(a, c_i) -> ObsDecomposition:
    a = as_matrix(a)
    c_i = as_matrix(c_i)
    n = a.shape[0]
    rows = [c_i]
    for _ in range(n - 1):
        rows.append(rows[-1] @ a)
    obs_mat = np.vstack(rows)
    u, sing, vt = np.linalg.svd(obs_mat)
    if sing.size == 0 or sing[0] == 0.0:
        rank = 0
    else:
        rank = int(np.sum(sing > 1e-9 * sing[0]))
    v = vt.T
    t = np.hstack([v[:, :rank], v[:, rank:]])
    a_t = t.T @ a @ t
    return ObsDecomposition(
        t_i=t,
        a_o=a_t[:rank, :rank],
        c_o=c_i @ t[:, :rank],
        a_21=a_t[rank:, :rank],
        a_obar=a_t[rank:, rank:],
        obs_dim=rank,
    )


def local_observer_gain(decomp: ObsDecomposition, poles) -> np.ndarray:
    """Observer gain for the observable block, lifted back to full coordinates."""
    poles = np.asarray(poles, dtype=float)
    if decomp.obs_dim == 0:
        if poles.size:
            raise SynthesisError("no observable subspace, cannot place observer poles")
        return np.zeros((decomp.t_i.shape[0], decomp.c_o.shape[0] or 1))
    if poles.size != decomp.obs_dim:
        raise SynthesisError(
            f"need {decomp.obs_dim} local observer poles, got {poles.size}"
        )
    l_o = observer_gain_global(decomp.a_o, decomp.c_o, poles)
    return decomp.t_i[:, :decomp.obs_dim] @ l_o


@dataclass(frozen=True)
class GainSet:
    """Controller blocks K_i, global observer L, local observer gains, coupling gain."""

    k_blocks: tuple
    l_global: np.ndarray
    l_local: tuple
    eta: float

    def __post_init__(self):
        if self.eta < 0:
            raise SynthesisError("coupling gain must be nonnegative")

    @property
    def n_agents(self) -> int:
        return len(self.k_blocks)

    @property
    def k(self) -> np.ndarray:
        return np.vstack(self.k_blocks)

    def a_bk(self, plant: PlantModel) -> np.ndarray:
        return plant.a + plant.b @ self.k

    def l_block(self, plant: PlantModel, i: int) -> np.ndarray:
        o = sum(plant.output_partition[:i])
        return self.l_global[:, o:o + plant.output_partition[i]]

    def observer_gain(self, plant: PlantModel, i: int, l_ii: int) -> np.ndarray:
        """Gain actually applied by agent i's observer: local when isolated,
        N L_i once the agent has at least one live link."""
        if l_ii >= 1:
            return self.n_agents * self.l_block(plant, i)
        return self.l_local[i]


def synthesize_gains(plant: PlantModel, controller_poles, observer_poles_global,
                     observer_poles_local, eta) -> GainSet:
    """Build the full gain set from pole specifications.

    observer_poles_local is one pole list per agent, sized to that agent's
    observable subspace.  eta may be a number or "auto".
    """
    k = place_poles(plant.a, plant.b, controller_poles)
    k_blocks = []
    off = 0
    for i in range(plant.n_agents):
        k_blocks.append(k[off:off + plant.input_partition[i], :])
        off += plant.input_partition[i]
    l_global = observer_gain_global(plant.a, plant.c, observer_poles_global)
    l_local = []
    for i in range(plant.n_agents):
        decomp = obs_decompose(plant.a, plant.c_block(i))
        l_local.append(local_observer_gain(decomp, observer_poles_local[i]))
    return GainSet(
        k_blocks=tuple(k_blocks),
        l_global=l_global,
        l_local=tuple(l_local),
        eta=float(eta),
    )


class ErrorSystem:
    """Stacked estimation-error dynamics, one realization per connection configuration."""

    def __init__(self, plant: PlantModel, gains: GainSet):
        if gains.n_agents != plant.n_agents:
            raise SynthesisError("gain set and plant disagree on the number of agents")
        self.plant = plant
        self.gains = gains
        n, nn = plant.n, plant.n * plant.n_agents
        self.e_mat = np.hstack([
            plant.b_block(i) @ gains.k_blocks[i] for i in range(plant.n_agents)
        ])
        self.i_stack = np.vstack([np.eye(n)] * plant.n_agents)
        self._bk = [plant.b_block(i) @ gains.k_blocks[i] for i in range(plant.n_agents)]
        self._nn = nn

    def f_matrix(self, config: ConnectionConfig) -> np.ndarray:
        plant, gains = self.plant, self.gains
        n, N = plant.n, plant.n_agents
        out = np.zeros((self._nn, self._nn))
        a_bk = gains.a_bk(plant)
        for i in range(N):
            l_gain = gains.observer_gain(plant, i, config.laplacian[i, i])
            for j in range(N):
                block = -self._bk[j].copy()
                if i == j:
                    block += a_bk - l_gain @ plant.c_block(i)
                out[i * n:(i + 1) * n, j * n:(j + 1) * n] = block
        return out

    def j_matrix(self, config: ConnectionConfig) -> np.ndarray:
        plant, gains = self.plant, self.gains
        n, N = plant.n, plant.n_agents
        out = np.zeros((self._nn, plant.m))
        for i in range(N):
            l_gain = gains.observer_gain(plant, i, config.laplacian[i, i])
            out[i * n:(i + 1) * n, :] = l_gain @ plant.output_selector(i)
        return out

    def a_e_matrix(self, config: ConnectionConfig) -> np.ndarray:
        coupling = self.gains.eta * kron(config.laplacian.astype(float), np.eye(self.plant.n))
        return self.f_matrix(config) - coupling


def assemble_error_system(plant: PlantModel, gains: GainSet) -> ErrorSystem:
    return ErrorSystem(plant, gains)


@dataclass(frozen=True)
class BarSystem:
    """Full-connection error dynamics in averaged/disagreement coordinates."""

    a_bar: np.ndarray
    w_bar: np.ndarray
    v_bar: np.ndarray
    e_bar_basis: np.ndarray
    h: np.ndarray
    f_bar: np.ndarray
    j_bar: np.ndarray


def disagreement_block(plant: PlantModel, gains: GainSet, split: SpectralSplit,
                       error_system: ErrorSystem, full: ConnectionConfig) -> np.ndarray:
    s_i = kron(split.s, np.eye(plant.n))
    f_bar = error_system.f_matrix(full)
    return s_i.T @ f_bar @ s_i - gains.eta * kron(np.diag(split.lambda_plus), np.eye(plant.n))


def coupling_gain(plant: PlantModel, gains_without_eta: GainSet, split: SpectralSplit,
                  floor_margin: float = 0.1, max_eta: float = 1e12) -> float:
    """Smallest doubling-search eta making the disagreement block decay with the
    requested margin.  Returns 0.0 when no coupling is needed."""
    from .graphs import full_config

    underlying = CommGraph(adjacency=(split.laplacian < 0).astype(int))
    full = full_config(underlying)
    eta = 0.0
    while True:
        gains = GainSet(
            k_blocks=gains_without_eta.k_blocks,
            l_global=gains_without_eta.l_global,
            l_local=gains_without_eta.l_local,
            eta=eta,
        )
        err = ErrorSystem(plant, gains)
        block = disagreement_block(plant, gains, split, err, full)
        if np.linalg.eigvals(block).real.max() <= -floor_margin:
            return eta
        eta = 1.0 if eta == 0.0 else 2.0 * eta
        if eta > max_eta:
            raise SynthesisError("coupling gain search exceeded the cap")


def assemble_bar_system(plant: PlantModel, gains: GainSet,
                        split: SpectralSplit) -> BarSystem:
    """Build the averaged/disagreement realization of the full-connection error
    dynamics, checking that the coupling gain makes the disagreement block decay."""
    from .graphs import full_config

    underlying = CommGraph(adjacency=(split.laplacian < 0).astype(int))
    full = full_config(underlying)
    err = ErrorSystem(plant, gains)
    n, N = plant.n, plant.n_agents
    a_bk = gains.a_bk(plant)
    s_i = kron(split.s, np.eye(n))
    f_bar = err.f_matrix(full)
    j_bar = err.j_matrix(full)
    h = np.hstack([
        a_bk / N - plant.b_block(i) @ gains.k_blocks[i]
        - gains.l_block(plant, i) @ plant.c_block(i)
        for i in range(N)
    ])
    lower_right = s_i.T @ f_bar @ s_i - gains.eta * kron(np.diag(split.lambda_plus), np.eye(n))
    if N > 1 and np.linalg.eigvals(lower_right).real.max() >= 0:
        raise SynthesisError(
            "disagreement block is not Hurwitz; increase eta (see coupling_gain)"
        )
    a_bar = np.block([
        [plant.a - gains.l_global @ plant.c, h @ s_i],
        [s_i.T @ f_bar @ err.i_stack, lower_right],
    ])
    w_bar = np.vstack([np.eye(n), s_i.T @ err.i_stack])
    v_bar = np.vstack([gains.l_global, s_i.T @ j_bar])
    e_bar_basis = np.hstack([err.i_stack, s_i])
    return BarSystem(a_bar=a_bar, w_bar=w_bar, v_bar=v_bar, e_bar_basis=e_bar_basis,
                     h=h, f_bar=f_bar, j_bar=j_bar)
