"""Flow-structured neural surrogates for ODEs, their baselines, and a
benchmark harness."""

from .autodiff import Tensor, Tape, AdamState, adam_step, backward, make_rng, xavier_init
from .conjugate_net import CouplingEnsemble, CouplingLayer, Mlp, NcfModel, ncf_forward, ncf_init, twin_augment
from .dynamics import (FitzHughNagumo, HodgkinHuxley, LotkaVolterra, RescaledField,
                       VectorField, midpoint_solve, rk4_solve, verify_translation_conjugation)
from .harness import ExperimentSpec, RunResult, emit_plotdata, emit_table, run_experiment
from .matrix_flow import AffineFlow, affine_flow_eval, expm, init_constrained_linearization, init_skew_fallback, skew_project
from .training import MlpPinn, NeuralOde, data_loss, eval_metrics, fd_time_derivative, pinn_loss, train

__version__ = "0.1.0"
