"""Qubit-subset state tracing with virtualized Pauli checks on a noisy simulator."""

from .circuit import Circuit, CutPoint, Gate, SingleQubitState, check_condition
from .pauli import PauliString
from .sim import NoiseModel, hellinger_fidelity, ideal_distribution, noisy_distribution, sample, simulate_exact
from .qspc import CheckPair, assemble, build_copies, execute_exact, pcs_postselect_oracle, tomographic_baseline
from .planner import place_cuts, plan_subset, prune_false_dependencies, traceback
from .recombine import LocalResult, bayes_update, feed_forward, marginal, run_multilayer
from .benchmarks import gen_benchmark
from .bench import ExperimentConfig, Report, emit_plotdata, run_experiment

__version__ = "0.1.0"
