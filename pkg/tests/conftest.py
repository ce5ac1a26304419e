import json
import time
from pathlib import Path

import numpy as np
import pytest

import etconnect.lmi as lmi
import etconnect.scenario as scen

CONFIG_PATH = Path(__file__).resolve().parents[1] / "configs" / "water3.json"


@pytest.fixture(scope="session")
def water3_config():
    return scen.load_config(CONFIG_PATH)


@pytest.fixture(scope="session")
def water3_system(water3_config):
    cfg = water3_config
    plant = scen.build_plant(cfg)
    underlying = scen.build_graph(cfg)
    gains = scen.build_gains(cfg, plant, underlying)
    return plant, underlying, gains


@pytest.fixture(scope="session")
def water3_design(water3_config, water3_system):
    """The solved water-network design, shared by everything downstream.

    Also records the wall time so the acceptance suite can assert the budget.
    """
    plant, underlying, gains = water3_system
    t0 = time.time()
    design = lmi.solve_design(
        plant, gains, underlying,
        weights=water3_config["design"]["weights"],
        alpha_grid=water3_config["design"]["alpha_grid"],
        gamma_mode=water3_config["design"]["gamma_mode"],
    )
    elapsed = time.time() - t0
    return design, elapsed


@pytest.fixture(scope="session")
def water3_scenario(water3_config, water3_system, water3_design):
    plant, underlying, gains = water3_system
    design, _ = water3_design
    data = lmi.design_to_dict(design, gains, scen.config_hash(water3_config))
    return scen.build_scenario(water3_config, plant, gains, underlying, data,
                               design.table)


def small_plant():
    """Two-agent, two-state system used by the fast unit tests."""
    from etconnect.plant import PlantModel

    return PlantModel(
        a=np.diag([-0.1, -0.2]),
        b=np.eye(2),
        c=np.eye(2),
        input_partition=(1, 1),
        output_partition=(1, 1),
        q=100.0 * np.eye(2),
        r=100.0 * np.eye(2),
    )


def small_graph():
    from etconnect.graphs import CommGraph

    return CommGraph(adjacency=np.array([[0, 1], [1, 0]]))


def small_gains(eta=50.0):
    from etconnect.gains import synthesize_gains

    return synthesize_gains(small_plant(), [-1.0, -1.0], [-5.0, -5.0],
                            [[-3.0], [-3.0]], eta=eta)


@pytest.fixture(scope="session")
def small_system():
    return small_plant(), small_graph(), small_gains()


@pytest.fixture(scope="session")
def small_design(small_system):
    plant, underlying, gains = small_system
    design = lmi.solve_design(plant, gains, underlying,
                              alpha_grid=np.logspace(-2, 2, 9))
    return design
