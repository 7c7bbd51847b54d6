"""Laplacian-kernelized multi-user contextual bandits."""
from .analysis import (bound_crude, bound_regular, clique_head_tail, effective_dimension,
                       info_gain, rank_collapse_sweep)
from .env import Environment, generate_rounds, make_gp_draw, make_linear_gob, make_pool, make_representer
from .estimator import MultiUserGPRegressor
from .exceptions import NumericalError, ParameterError, ProtocolError, ValidationError
from .graph import (LaplacianSpectrum, UserGraph, build_laplacian, gen_erdos_renyi, gen_rbf_graph,
                    gen_sbm, spectral_scale)
from .harness import RunConfig, load_config, pilot_tune, run, run_trial, summarize
from .kernel import MultiUserKernel, SquaredExponential, agent_kernel_matrix, make_base_kernel
from .policy import (GPUCB, LKGPTS, LKGPUCB, CoopKernelUCB, GoBLin, GraphUCB, OraclePolicy,
                     PerUserLinUCB, PooledLinUCB, make_policy)
from .posterior import GridPosterior
from .schedule import lambda_schedule

__version__ = "0.1.0"
