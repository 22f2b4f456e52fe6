"""Peer-effect estimation in linear-in-means models with endogenous networks."""

from .errors import PeerfxError
from .network import (
    AdjacencyNetwork,
    CoefVector,
    PeerWeights,
    peer_aggregate,
    row_normalize,
    scaled_degrees,
    solve_outcomes,
)
from .dgp import DgpConfig, Sample, reference_design, simulate
from .fe_logit import DyadFeatures, FitOptions, LinkModelFit, dyad_features, fit_joint_mle

__version__ = "0.1.0"
from .sieve import SieveBasis, control_design, eval_basis, loo_cv_select, residualize
from .estimators import ControlSpec, EstimateResult, build_wz, estimate, t_reject, two_sls
from .mc import McConfig, McSummary, run_mc, summarize
from .config import load_config, parse_config
