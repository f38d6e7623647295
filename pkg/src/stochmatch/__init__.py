"""Online matching with stochastic rewards: simulators, LP benchmarks,
gain-splitting functions and dual-feasibility checks."""

__version__ = "0.1.0"
