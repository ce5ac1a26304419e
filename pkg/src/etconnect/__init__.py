"""Design and simulation of decentralized event-triggered network connection
for multi-agent LTI control."""

from .graphs import (CommGraph, ConnectionConfig, SpectralSplit, enumerate_configs,
                     full_config, induced_config, is_connected, laplacian,
                     spectral_split, zero_config)
from .gains import (BarSystem, ErrorSystem, GainSet, ObsDecomposition,
                    assemble_bar_system, assemble_error_system, coupling_gain,
                    local_observer_gain, obs_decompose, observer_gain_global,
                    place_poles, synthesize_gains)
from .linalg import (SymEig, expm, kron, min_eig_margin, project_psd,
                     psd_margin_tol, sym_eig)
from .lmi import (GammaTable, LmiContext, LyapunovDesign, QbLmiInstance,
                  build_qb_lmi, build_trigger_lmi, feasibility_solve,
                  gamma_of_config, gamma_table, load_design, save_design,
                  solve_design, verify_design)
from .plant import PlantModel, PlantState, apply_setpoint_jump, sample_disturbance
from .protocol import (AgentKnowledge, AgentRuntime, ProtocolEngine, TriggerDesign,
                       agent_step, exchange, gamma_bar, should_connect,
                       stay_connected, trigger_bound)
from .sim import (RunResult, Scenario, metrics, rk4_step, run, run_batch,
                  segment_step, write_events_csv, write_trace_csv)

__version__ = "0.1.0"
