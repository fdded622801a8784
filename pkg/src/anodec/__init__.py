"""Automatic controller design for a synthetic pneumatic actuator.

Pipeline: probe the plant for 30 s of input-output data, fit a small latent
ODE surrogate to it, train a latent ODE controller entirely against the
frozen surrogate, then evaluate reference tracking on the plant next to a
hand-tuned PID baseline.
"""

from .odecore import Grid, AdamState, GradResult, IntegrationError
from .nets import (ModelParams, ControllerParams, InputRange, OutputRange,
                   init_model_params, init_controller_params,
                   save_checkpoint, load_checkpoint)
from .plant import Plant, PlantConfig, PlantState, SimulationFault
from .siggen import SampledSignal, SplineGenConfig
from .learn import (Dataset, TrainConfig, TrainReport, collect_dataset,
                    trajectory_loss, train_model, train_controller,
                    closed_loop_rollout)
from .evaluate import (TrialRecord, SuiteReport, DisturbanceEvent,
                       DisturbanceSchedule, AnodecController, PidController,
                       run_trial, rmse_deg, evaluate_suite, export_report)

__version__ = "0.1.0"
