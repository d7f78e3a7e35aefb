"""Stochastic on-time arrival routing with robustness-weighted successor values."""
from .grid import TimeGrid
from .network import LinkParams, Network, build_paper_grid, load_network, max_out_degree
from .reliability import (
    RobustnessWeights,
    Solution,
    load_solution,
    query,
    save_solution,
    solve_classic,
    solve_robust,
)
from .stochastic import BivariatePair, GammaMarginal, build_network_kernels, gamma_from_moments

__version__ = "0.1.0"
