"""Optimisation Monte Carlo and Robust OMC for likelihood-free inference."""

from . import simulators  # noqa: F401  registers the bundled simulators
from .baseline import HeuristicConfig, OmcResult, heuristic_reweight, omc, rejection_abc
from .exceptions import (
    ConfigurationError,
    NumericalError,
    RegionDegenerateError,
    RobustOmcError,
    UndefinedESSError,
)
from .kernels import BACKEND
from .metrics import GridDensity, GridSpec, PosteriorEstimate, RomcSample, WeightedSample, ess, jsd, to_grid
from .model import (
    FunctionSimulator,
    IndependentPrior,
    LinearGaussianSimulator,
    SeededSimulator,
    UniformPrior,
    euclidean,
    jacobian,
    make_simulator,
    register_simulator,
    simulate_distance,
)
from .optimise import OptimiserConfig
from .regions import (
    BoxRegion,
    EllipsoidRegion,
    IntervalRegion,
    build_box,
    clip_to_support,
    expand_box_alternative,
    fit_ellipse,
    sample_proposal,
)
from .romc import (
    AcceptanceCheck,
    BoxConfig,
    RomcResult,
    rethreshold,
    romc_weights,
    run_boxed_romc,
    run_ellipsoidal_romc,
)
from .simulators import Exp1Simulator, Exp2Simulator
from .surrogate import BoConfig, bayes_opt, gp_fit, gp_hessian, gp_predict
from .thresholds import QuantileConfig, select_epsilon

__version__ = "0.1.0"
