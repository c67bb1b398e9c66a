"""Sequence models as interaction tensors: factorized layers, linear dynamics,
interaction rank, multi-head synthesis, Jacobian analysis and a
teacher-student harness."""

__version__ = "0.1.0"

from .dynamics import (LTISystem, SelectiveSystem, StepRule, load_system, lti_convolve,
                       lti_scan, random_lti, rnn_tanh_forward, save_system, selective_scan)
from .errors import (CapacityError, ConditioningError, DefectiveTransition, DegenerateProjection,
                     Diverged, EmptyPlot, InsufficientHeads, InvalidInput, NumericalFailure,
                     OrderError, RankMismatch, SeqKernelError, ShapeError, SingularTransition)
from .factorized import (FactorizedHead, MultiHeadModel, apply_factorized, apply_multihead,
                         load_model, multihead_tensor, save_model)
from .gradients import adversarial_input, attention_jacobian, decay_sweep, ssm_jacobian
from .kernel import InteractionTensor, apply_tensor, impulse_family, materialize_lti
from .rank import interaction_rank, projection_error, single_head_best_fit, rotation_witness
from .synthesis import synthesize, verify_equivalence
from .training import TeacherSpec, TrainConfig, build_teacher, head_sweep, init_student, train_student
