"""Neural controllers trained through unrolled differentiable simulators.

Four update vectors are available for every rollout: the regular gradient
(R), the modified update with the controller's input Jacobian cut (M), their
sign-masked combination (C) and the one-step stopped update (S).
"""
from .errors import (BPTTFieldError, ConfigError, InputError, NonFiniteWarning, NumericalError,
                     RunAborted, SingularityError, SpecError)
from .harness import EpochRecord, RunResult, summarize, sweep, train_run
from .tasks import TrainConfig, build_problem
from .unroll import (LossSpec, UpdateBundle, backward_modified, backward_regular, backward_stopped,
                     combine, compute_bundle, rollout)

__version__ = "0.1.0"
