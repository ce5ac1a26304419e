"""Closed-loop simulation of plant + distributed observers + connection protocol.

Between protocol events the coupled system is linear time invariant, so each
step applies the exact zero-order-hold discretization of the active
configuration (computed once per distinct Laplacian via an augmented matrix
exponential).  The coupling gain makes the connected dynamics stiff, which
rules out explicit integration at practical step sizes.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .gains import GainSet
from .graphs import CommGraph, ConnectionConfig, induced_config, laplacian_key
from .linalg import expm
from .lmi import GammaTable
from .plant import PlantModel, sample_disturbance
from .protocol import ProtocolEngine, TriggerDesign


class ScenarioError(ValueError):
    pass


@dataclass
class Scenario:
    """Complete, validated description of one simulation experiment."""

    plant: PlantModel
    gains: GainSet
    underlying: CommGraph
    p: np.ndarray
    p_bar: np.ndarray
    trigger: TriggerDesign
    duration: float
    dt: float
    seed: int
    disturbance_mode: str
    x0: np.ndarray
    xhat0: list
    jumps: list = field(default_factory=list)   # (time, delta) pairs
    eps_hold: float = 1e-3

    def __post_init__(self):
        if self.dt <= 0 or self.duration < self.dt:
            raise ScenarioError("need dt > 0 and duration >= dt")
        self.x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        self.xhat0 = [np.asarray(x, dtype=float).reshape(-1) for x in self.xhat0]
        if len(self.xhat0) != self.plant.n_agents:
            raise ScenarioError("need one initial estimate per agent")
        e0 = np.concatenate([self.x0 - xh for xh in self.xhat0])
        v_e0 = float(e0 @ self.p_bar @ e0)
        if v_e0 > 1.0 + 1e-9:
            raise ScenarioError(
                f"initial estimates put e(0) outside the error ellipsoid "
                f"(e0' P_bar e0 = {v_e0:.4g} > 1)"
            )
        self.jumps = sorted(((float(t), np.asarray(d, dtype=float).reshape(-1))
                             for t, d in self.jumps), key=lambda td: td[0])


@dataclass
class RunResult:
    t: np.ndarray
    v_x: np.ndarray
    v_e: np.ndarray
    connected: np.ndarray          # (steps, N) active flags
    y_quad: np.ndarray             # (steps, N)
    bound: np.ndarray              # (steps, N)
    triggered: np.ndarray          # (steps, N) quad <= bound
    events: list                   # (time, active-flag tuple)
    summary: dict
    e: np.ndarray = None           # (steps, N*n) when traced
    w: np.ndarray = None
    v: np.ndarray = None


def build_stacked(plant: PlantModel, gains: GainSet, config: ConnectionConfig):
    """Closed-loop matrices for [x; xhat_1; ...; xhat_N] under one configuration."""
    n, n_agents, m = plant.n, plant.n_agents, plant.m
    dim = (n_agents + 1) * n
    a = np.zeros((dim, dim))
    b_w = np.zeros((dim, n))
    b_v = np.zeros((dim, m))
    a[:n, :n] = plant.a
    b_w[:n, :] = np.eye(n)
    a_bk = gains.a_bk(plant)
    lap = config.laplacian
    for i in range(n_agents):
        rows = slice(n * (i + 1), n * (i + 2))
        l_gain = gains.observer_gain(plant, i, lap[i, i])
        a[:n, rows] = plant.b_block(i) @ gains.k_blocks[i]
        a[rows, :n] = l_gain @ plant.c_block(i)
        a[rows, rows] = a_bk - l_gain @ plant.c_block(i)
        for j in range(n_agents):
            cols = slice(n * (j + 1), n * (j + 2))
            a[rows, cols] += -gains.eta * lap[i, j] * np.eye(n)
        b_v[rows, :] = l_gain @ plant.output_selector(i)
    return a, b_w, b_v


def discretize(a: np.ndarray, b_w: np.ndarray, b_v: np.ndarray, dt: float):
    """Exact ZOH step matrices: z+ = Ad z + Bwd w + Bvd v."""
    dim = a.shape[0]
    aug = np.zeros((2 * dim, 2 * dim))
    aug[:dim, :dim] = a
    aug[:dim, dim:] = np.eye(dim)
    phi = expm(aug * dt)
    a_d = phi[:dim, :dim]
    integral = phi[:dim, dim:]
    return a_d, integral @ b_w, integral @ b_v


def segment_step(z: np.ndarray, config: ConnectionConfig, w: np.ndarray,
                 v: np.ndarray, dt: float, plant: PlantModel,
                 gains: GainSet) -> np.ndarray:
    """Advance the stacked state one step under a constant configuration."""
    a, b_w, b_v = build_stacked(plant, gains, config)
    a_d, b_wd, b_vd = discretize(a, b_w, b_v, dt)
    return a_d @ z + b_wd @ w + b_vd @ v


def rk4_step(z: np.ndarray, config: ConnectionConfig, w: np.ndarray, v: np.ndarray,
             dt: float, plant: PlantModel, gains: GainSet) -> np.ndarray:
    """Classical RK4 with held disturbances; only stable for tiny steps, used to
    cross-check the exact stepping."""
    a, b_w, b_v = build_stacked(plant, gains, config)
    drive = b_w @ w + b_v @ v

    def f(state):
        return a @ state + drive

    k1 = f(z)
    k2 = f(z + 0.5 * dt * k1)
    k3 = f(z + 0.5 * dt * k2)
    k4 = f(z + dt * k3)
    return z + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def run(scenario: Scenario, *, always_connected: bool = False, seed: int = None,
        keep_trace: bool = True) -> RunResult:
    """Execute the protocol round plus exact integration step over the horizon.

    Fully deterministic for a given seed; the always-connected mode forces every
    trigger on to provide the baseline comparison.
    """
    plant, gains = scenario.plant, scenario.gains
    n, n_agents = plant.n, plant.n_agents
    dt = scenario.dt
    nsteps = int(round(scenario.duration / dt))
    rng = np.random.default_rng(scenario.seed if seed is None else seed)

    engine = ProtocolEngine(scenario.underlying, scenario.trigger,
                            always_connected=always_connected)
    cache = {}

    def step_matrices(active: np.ndarray):
        members = tuple(int(i) for i in np.nonzero(active)[0])
        if members not in cache:
            config = induced_config(scenario.underlying, members)
            key = laplacian_key(config.laplacian)
            if key not in cache:
                a, b_w, b_v = build_stacked(plant, gains, config)
                cache[key] = discretize(a, b_w, b_v, dt)
            cache[members] = cache[key]
        return cache[members]

    z = np.concatenate([scenario.x0] + list(scenario.xhat0))
    jumps = list(scenario.jumps)
    jump_steps = {int(round(t / dt)): delta for t, delta in jumps}

    chol_q_t = np.linalg.cholesky(plant.q).T
    chol_r_t = np.linalg.cholesky(plant.r).T
    boundary = scenario.disturbance_mode == "boundary"

    def draw(chol_t, dim):
        u = rng.standard_normal(dim)
        u /= np.linalg.norm(u)
        if not boundary:
            u *= rng.uniform() ** (1.0 / dim)
        return np.linalg.solve(chol_t, u)

    offsets = np.cumsum([0] + list(plant.output_partition))

    t_arr = np.arange(nsteps) * dt
    v_x = np.zeros(nsteps)
    v_e = np.zeros(nsteps)
    connected = np.zeros((nsteps, n_agents), dtype=bool)
    y_quad = np.zeros((nsteps, n_agents))
    bound = np.zeros((nsteps, n_agents))
    triggered = np.zeros((nsteps, n_agents), dtype=bool)
    e_tr = np.zeros((nsteps, n_agents * n)) if keep_trace else None
    w_tr = np.zeros((nsteps, n)) if keep_trace else None
    v_tr = np.zeros((nsteps, plant.m)) if keep_trace else None

    for k in range(nsteps):
        t = k * dt
        if k in jump_steps:
            z[:n] += jump_steps[k]
            engine.restart(t)
        x = z[:n]
        w = draw(chol_q_t, n)
        v = draw(chol_r_t, plant.m)
        y = plant.c @ x + v
        y_parts = [y[offsets[i]:offsets[i + 1]] for i in range(n_agents)]
        active, quads, bounds = engine.round(t, y_parts, dt)

        err = np.concatenate([x - z[n * (i + 1):n * (i + 2)] for i in range(n_agents)])
        v_x[k] = x @ scenario.p @ x
        v_e[k] = err @ scenario.p_bar @ err
        connected[k] = active
        y_quad[k] = quads
        bound[k] = bounds
        triggered[k] = quads <= bounds
        if keep_trace:
            e_tr[k] = err
            w_tr[k] = w
            v_tr[k] = v

        a_d, b_wd, b_vd = step_matrices(active)
        z = a_d @ z + b_wd @ w + b_vd @ v

    result = RunResult(t=t_arr, v_x=v_x, v_e=v_e, connected=connected,
                       y_quad=y_quad, bound=bound, triggered=triggered,
                       events=list(engine.events), summary={},
                       e=e_tr, w=w_tr, v=v_tr)
    result.summary = metrics(result, scenario)
    return result


def convergence_time(t: np.ndarray, v_x: np.ndarray, horizon_end: float,
                     eps_hold: float = 1e-3):
    """First time V settles at/below 1 and stays below 1 + eps_hold afterwards."""
    inside = v_x <= 1.0
    suffix_ok = np.zeros(len(v_x), dtype=bool)
    running = True
    for k in range(len(v_x) - 1, -1, -1):
        running = running and (v_x[k] <= 1.0 + eps_hold)
        suffix_ok[k] = running
    hits = np.nonzero(inside & suffix_ok)[0]
    if len(hits) == 0:
        return None
    return float(t[hits[0]])


def metrics(result: RunResult, scenario: Scenario) -> dict:
    """Summary statistics: convergence time, disconnect fractions, event counts,
    invariance violations."""
    dt = scenario.dt
    jumps = [t for t, _ in scenario.jumps]
    seg_end = jumps[0] if jumps else float(result.t[-1] + dt)
    seg = result.t < seg_end
    conv = convergence_time(result.t[seg], result.v_x[seg], seg_end,
                            scenario.eps_hold)
    connected = result.connected
    frac_conn = connected.mean(axis=0)
    entered = np.nonzero(result.v_x <= 1.0)[0]
    violations = 0
    if len(entered):
        violations = int(np.sum(result.v_x[entered[0]:] > 1.0 + 1e-6))
    transitions = np.diff(connected.astype(int), axis=0, prepend=0)
    return {
        "convergence_time_s": conv,
        "disconnect_fraction_mean": float(1.0 - frac_conn.mean()),
        "disconnect_fraction_per_agent": [float(1.0 - f) for f in frac_conn],
        "connected_steps_per_agent": [int(s) for s in connected.sum(axis=0)],
        "connect_events_per_agent": [int(c) for c in (transitions > 0).sum(axis=0)],
        "n_events": len(result.events),
        "invariance_violations": violations,
    }


def run_batch(scenario: Scenario, trials: int, *, always_connected: bool = False,
              base_seed: int = None) -> list:
    """Run independent trials with consecutive seeds; returns their summaries."""
    base = scenario.seed if base_seed is None else base_seed
    out = []
    for k in range(trials):
        result = run(scenario, always_connected=always_connected, seed=base + k,
                     keep_trace=False)
        out.append(result.summary)
    return out


def write_trace_csv(result: RunResult, path):
    n_agents = result.connected.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["t", "V_x", "V_e"]
        for i in range(n_agents):
            header += [f"connected_{i + 1}", f"y_quad_{i + 1}", f"bound_{i + 1}"]
        writer.writerow(header)
        for k in range(len(result.t)):
            row = [f"{result.t[k]:.6f}", f"{result.v_x[k]:.9g}", f"{result.v_e[k]:.9g}"]
            for i in range(n_agents):
                row += [int(result.connected[k, i]), f"{result.y_quad[k, i]:.9g}",
                        f"{result.bound[k, i]:.9g}"]
            writer.writerow(row)


def write_events_csv(result: RunResult, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_bar_k", "config_bitmask"])
        for t, flags in result.events:
            mask = sum(1 << i for i, f in enumerate(flags) if f)
            writer.writerow([f"{t:.6f}", mask])
