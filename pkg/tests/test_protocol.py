import numpy as np
import pytest

from etconnect.graphs import (CommGraph, enumerate_configs, full_config,
                              induced_config, zero_config)
from etconnect.lmi import GammaTable
from etconnect.protocol import (UNKNOWN, AgentKnowledge, AgentRuntime,
                                ProtocolEngine, TriggerDesign, agent_step,
                                exchange, gamma_bar, should_connect,
                                stay_connected, trigger_bound)

CHAIN = CommGraph(adjacency=np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]]))

GAMMAS = {(): 1.0, (0, 1): 0.4, (1, 2): 0.6, (0, 1, 2): -2.0}


def chain_table(mode="enumerate"):
    entries = {}
    for cfg in enumerate_configs(CHAIN):
        members = tuple(sorted(cfg.connected_set))
        entries[cfg.key] = (cfg, GAMMAS[members])
    zero_key = zero_config(CHAIN).key
    table = GammaTable(mode=mode, entries=entries, worst_case=entries[zero_key][1],
                       zero_key=zero_key, full_key=full_config(CHAIN).key)
    if mode == "worst_case":
        table.entries = {k: v for k, v in entries.items()
                         if k in (zero_key, full_config(CHAIN).key)}
    return table


def chain_design(mode="enumerate", f_slope=0.01):
    return TriggerDesign(
        y_weights=tuple(np.eye(1) for _ in range(3)),
        table=chain_table("enumerate" if mode == "enumerate" else "worst_case"),
        f_slope=f_slope,
        gamma_mode=mode,
    )


def knowledge_for(agent, mode="enumerate"):
    return AgentKnowledge(agent, CHAIN, chain_table(), mode)


def test_trigger_bound_initial():
    kn = knowledge_for(0)
    assert trigger_bound(kn, 0.0) == pytest.approx(3.0)


def test_trigger_bound_clamps_at_three():
    kn = knowledge_for(1)
    flags = np.array([1, 1, 1], dtype=np.int8)
    kn.open_span(0.0, flags)
    # certified decay: gamma(full) = -2, so the exponent heads to -infinity
    assert trigger_bound(kn, 50.0) == pytest.approx(3.0)
    kn.open_span(50.0, flags)
    assert kn.exponent(50.0) == pytest.approx(-100.0)
    assert trigger_bound(kn, 60.0) == pytest.approx(3.0)


def test_trigger_bound_grows_when_disconnected():
    kn = knowledge_for(0)
    kn.open_span(0.0, np.array([0, UNKNOWN, UNKNOWN], dtype=np.int8))
    # worst completion of an own-flag-down span on the chain is the zero config
    assert kn.bound(2.0) == pytest.approx(2.0 + np.exp(GAMMAS[()] * 2.0))


def test_should_connect_boundary():
    y = np.array([1.0])
    assert should_connect(y, np.array([[2.9]]), 3.0)
    assert not should_connect(y, np.array([[3.1]]), 3.0)
    assert should_connect(y, np.array([[3.0]]), 3.0)  # non-strict inequality


def test_stay_connected_rule():
    assert stay_connected(0.5, 10.0, 0.01)
    assert not stay_connected(-0.2, 10.0, 0.01)
    # constant integrand g: never disconnect iff g >= -c_f
    c_f = 0.5
    for g in (-0.4, -0.5):
        stays = all(stay_connected(g * t, t, c_f) for t in np.linspace(0.1, 100, 50))
        assert stays == (g >= -c_f) or g == -c_f
    assert not stay_connected(-0.6 * 10.0, 10.0, c_f)
    # larger slope only makes staying easier
    assert stay_connected(-5.0, 10.0, 1.0)


def test_gamma_bar_enumerate_completions():
    table = chain_table()
    # agent 0 disconnected: the (1,2) edge may or may not be up
    flags = np.array([0, UNKNOWN, UNKNOWN], dtype=np.int8)
    assert gamma_bar(flags, CHAIN, table, "enumerate") == pytest.approx(
        max(GAMMAS[()], GAMMAS[(1, 2)]))
    # agents 0,1 connected, 2 unknown: completions are {0,1} and full
    flags = np.array([1, 1, UNKNOWN], dtype=np.int8)
    assert gamma_bar(flags, CHAIN, table, "enumerate") == pytest.approx(
        max(GAMMAS[(0, 1)], GAMMAS[(0, 1, 2)]))
    # full knowledge of the full configuration
    flags = np.array([1, 1, 1], dtype=np.int8)
    assert gamma_bar(flags, CHAIN, table, "enumerate") == pytest.approx(-2.0)


def test_gamma_bar_worst_case_mode():
    table = chain_table()
    flags = np.array([1, 1, UNKNOWN], dtype=np.int8)
    assert gamma_bar(flags, CHAIN, table, "worst_case") == pytest.approx(GAMMAS[()])
    flags = np.array([1, 1, 1], dtype=np.int8)
    assert gamma_bar(flags, CHAIN, table, "worst_case") == pytest.approx(-2.0)


def test_gamma_bar_dominates_truth_everywhere():
    table = chain_table()
    rng = np.random.default_rng(0)
    for _ in range(200):
        truth = rng.integers(0, 2, size=3)
        members = [i for i in range(3) if truth[i]]
        true_gamma = table.lookup(induced_config(CHAIN, members).laplacian)
        flags = truth.astype(np.int8)
        hide = rng.uniform(size=3) < 0.5
        flags[hide] = UNKNOWN
        for i in range(3):
            shown = flags.copy()
            shown[i] = truth[i]  # own flag always known
            for mode in ("enumerate", "worst_case"):
                assert gamma_bar(shown, CHAIN, table, mode) >= true_gamma - 1e-12


def test_exponent_accumulator_rebuild():
    kn = knowledge_for(0)
    rng = np.random.default_rng(1)
    t = 0.0
    for _ in range(30):
        flags = rng.integers(0, 2, size=3).astype(np.int8)
        flags[1] = UNKNOWN if rng.uniform() < 0.3 else flags[1]
        kn.open_span(t, flags)
        t += rng.uniform(0.01, 0.5)
    kn.open_span(t, np.array([0, 0, 0], dtype=np.int8))
    assert abs(kn._acc - kn.rebuild_exponent_acc()) <= 1e-12


def test_exchange_merge_and_noop():
    a = knowledge_for(0)
    b = knowledge_for(1)
    full_flags = np.array([1, 1, 1], dtype=np.int8)
    for kn in (a, b):
        kn.open_span(0.0, full_flags.copy())
    before = [rec.flags.copy() for rec in a.records]
    runtimes = [AgentRuntime(0, None, True, a), AgentRuntime(1, None, True, b),
                AgentRuntime(2, None, False, knowledge_for(2))]
    exchange(runtimes, np.array([True, True, False]), 1.0, CHAIN)
    assert all(np.array_equal(x.flags, y) for x, y in zip(a.records, before))

    # agent 1 knows the span fully, agent 0 does not
    a2 = knowledge_for(0)
    b2 = knowledge_for(1)
    a2.open_span(0.0, np.array([1, 1, UNKNOWN], dtype=np.int8))
    b2.open_span(0.0, np.array([1, 1, 0], dtype=np.int8))
    runtimes = [AgentRuntime(0, None, True, a2), AgentRuntime(1, None, True, b2),
                AgentRuntime(2, None, False, knowledge_for(2))]
    exchange(runtimes, np.array([True, True, False]), 1.0, CHAIN)
    assert a2.records[0].fully_known
    assert a2.tau(1.0) == pytest.approx(1.0)


def test_exchange_relays_one_hop_per_round():
    # knowledge about a past span flows 1 -> 2 -> 3 over two rounds
    kns = [knowledge_for(i) for i in range(3)]
    past = [np.array([0, UNKNOWN, UNKNOWN], dtype=np.int8),
            np.array([UNKNOWN, 0, UNKNOWN], dtype=np.int8),
            np.array([UNKNOWN, UNKNOWN, 1], dtype=np.int8)]
    now = [np.array([1, 1, UNKNOWN], dtype=np.int8),
           np.array([1, 1, 1], dtype=np.int8),
           np.array([UNKNOWN, 1, 1], dtype=np.int8)]
    for kn, p, c in zip(kns, past, now):
        kn.open_span(0.0, p.copy())
        kn.open_span(1.0, c.copy())
    active = np.array([True, True, True])
    runtimes = [AgentRuntime(i, None, True, kns[i]) for i in range(3)]
    exchange(runtimes, active, 2.0, CHAIN)
    # after one round agent 0 knows agent 1's past flag but not agent 2's
    assert kns[0].records[0].flags[1] == 0
    assert kns[0].records[0].flags[2] == UNKNOWN
    exchange(runtimes, active, 3.0, CHAIN)
    assert kns[0].records[0].flags[2] == 1
    assert kns[0].records[0].fully_known


def test_watermark_monotone_and_syncs():
    design = chain_design()
    engine = ProtocolEngine(CHAIN, design)
    rng = np.random.default_rng(2)
    taus = np.zeros(3)
    t = 0.0
    dt = 0.1
    # random measurement magnitudes flip triggers on and off
    for k in range(80):
        y = [np.array([rng.choice([0.1, 10.0])]) for _ in range(3)]
        engine.round(t, y, dt)
        new_taus = np.array([kn.tau(t) for kn in engine.knowledge])
        assert np.all(new_taus >= taus - 1e-12)
        taus = new_taus
        t += dt
    # a few rounds of full connection equalize the watermarks on the chain
    for _ in range(3):
        engine.round(t, [np.array([0.0])] * 3, dt)
        t += dt
    final = [kn.tau(t) for kn in engine.knowledge]
    assert max(final) - min(final) <= 1e-12


def test_engine_knowledge_is_sound():
    design = chain_design()
    engine = ProtocolEngine(CHAIN, design)
    rng = np.random.default_rng(3)
    truth = []
    t = 0.0
    dt = 0.05
    for k in range(120):
        y = [np.array([rng.choice([0.1, 10.0])]) for _ in range(3)]
        active, _, _ = engine.round(t, y, dt)
        truth.append(active.copy())
        t += dt
    # reconstruct per-span truth from the event log and compare known flags
    events = engine.events
    for i, kn in enumerate(engine.knowledge):
        assert len(kn.records) == len(events)
        for rec, (t_ev, flags_ev) in zip(kn.records, events):
            for j in range(3):
                if rec.flags[j] != UNKNOWN:
                    assert rec.flags[j] == int(flags_ev[j])


def test_engine_conservative_vs_omniscient():
    # partial-knowledge bounds must never undercut fully informed ones
    design = chain_design()
    engine = ProtocolEngine(CHAIN, design)
    omni = [knowledge_for(i) for i in range(3)]
    rng = np.random.default_rng(4)
    t = 0.0
    dt = 0.05
    prev = None
    for k in range(150):
        bounds = [kn.bound(t) for kn in engine.knowledge]
        omni_bounds = [kn.bound(t) for kn in omni]
        for b, ob in zip(bounds, omni_bounds):
            assert b >= ob - 1e-9
        y = [np.array([rng.choice([0.1, 10.0])]) for _ in range(3)]
        active, _, _ = engine.round(t, y, dt)
        flags = active.astype(np.int8)
        if prev is None or tuple(active) != prev:
            for kn in omni:
                kn.open_span(t, flags.copy())
            prev = tuple(active)
        t += dt


def test_agent_step_local_luenberger():
    import scipy.linalg

    from conftest import small_gains, small_plant

    plant, gains = small_plant(), small_gains()
    design = chain_design()
    kn = AgentKnowledge(0, CHAIN, chain_table(), "enumerate")
    runtime = AgentRuntime(0, np.array([1.0, -1.0]), False, kn)
    y = np.array([5.0])          # q = 25 > 3: stays disconnected
    agent_step(runtime, y, 0.0, 0.01, design, plant, gains, l_ii=0,
               neighbor_estimates={}, neighbors_all_connected=False)
    assert not runtime.connected
    a_loc = gains.a_bk(plant) - gains.l_local[0] @ plant.c_block(0)
    aug = np.zeros((3, 3))
    aug[:2, :2] = a_loc
    aug[:2, 2] = (gains.l_local[0] @ y).reshape(-1)
    phi = scipy.linalg.expm(aug * 0.01)
    expected = phi[:2, :2] @ np.array([1.0, -1.0]) + phi[:2, 2]
    assert np.allclose(runtime.x_hat, expected)


def test_agent_step_trigger_and_gain_switch():
    from conftest import small_gains, small_plant

    plant, gains = small_plant(), small_gains()
    design = chain_design()
    kn = AgentKnowledge(0, CHAIN, chain_table(), "enumerate")
    runtime = AgentRuntime(0, np.zeros(2), False, kn)
    y = np.array([0.5])          # q = 0.25 <= 3: connects
    agent_step(runtime, y, 0.0, 0.001, design, plant, gains, l_ii=1,
               neighbor_estimates={1: np.array([0.1, 0.2])},
               neighbors_all_connected=True)
    assert runtime.connected
    # linked gain is N L_i, much stronger than the local one
    linked = gains.observer_gain(plant, 0, 1)
    assert np.allclose(linked, plant.n_agents * gains.l_block(plant, 0))


def test_engine_event_bookkeeping():
    design = chain_design()
    engine = ProtocolEngine(CHAIN, design)
    t = 0.0
    dt = 0.1
    ys = [[10.0, 10.0, 10.0], [0.1, 10.0, 10.0], [0.1, 0.1, 0.1], [0.1, 0.1, 0.1]]
    for row in ys:
        engine.round(t, [np.array([val]) for val in row], dt)
        t += dt
    times = [ev[0] for ev in engine.events]
    assert times == sorted(times)
    assert len(set(times)) == len(times)
    # configurations: all-off, agent 0 on, all on (no event on the repeat step)
    assert [ev[1] for ev in engine.events] == [
        (False, False, False), (True, False, False), (True, True, True)]
