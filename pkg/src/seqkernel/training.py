"""Teacher-student system identification with multi-head positional-table students.

A teacher is an LTI system whose transition is block-diagonal 2x2
rotations, so its impulse family spans a space of known dimension ``k``.
The student is a causal multi-head model ``sum_h V_h X A_h^T`` with
``A_h = mask(Phi_h Psi_h^T)`` and is fit by gradient descent using
hand-derived gradients of the squared error.
"""

import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import block_diag

from .dynamics import LTISystem
from .errors import Diverged, InvalidInput, RankMismatch
from .factorized import FactorizedHead, MultiHeadModel, PositionalTable, multihead_tensor
from .kernel import impulse_family, materialize_lti
from .linalg import make_rng, random_orthogonal, svd
from .rank import interaction_rank, rotation
from .synthesis import synthesize

DIVERGENCE_LOSS = 1e6


@dataclass(frozen=True)
class TeacherSpec:
    k: int
    n: int = 32
    d: int = 4
    p: int = 4
    block_angles: tuple = None
    mixing: str = "orthogonal"  # or "identity"
    seed: int = 0

    def angles(self):
        if self.block_angles is not None:
            return tuple(self.block_angles)
        nb = self.k // 2
        return tuple((b + 1) * np.pi / (2 * nb + 1) for b in range(nb))


def build_teacher(spec):
    """Rotation-block teacher with certified interaction rank ``spec.k``.

    ``B`` and ``C`` are the leading blocks of seeded Haar orthogonal
    matrices (or plain identity slices with ``mixing="identity"``).
    """
    k = spec.k
    if k < 2 or k % 2:
        raise InvalidInput(f"teacher rank must be a positive even number, got {k}")
    if k > min(spec.p * spec.d, spec.n):
        raise InvalidInput(f"rank {k} exceeds min(p*d, n) = {min(spec.p * spec.d, spec.n)}")
    angles = spec.angles()
    if len(angles) != k // 2:
        raise InvalidInput(f"need {k // 2} block angles, got {len(angles)}")
    A = block_diag(*[rotation(t) for t in angles])
    if spec.mixing == "identity":
        B, C = np.eye(k, spec.d), np.eye(spec.p, k)
    elif spec.mixing == "orthogonal":
        rng = make_rng(spec.seed, 7)
        B = random_orthogonal(max(k, spec.d), rng)[:k, :spec.d]
        C = random_orthogonal(max(k, spec.p), rng)[:spec.p, :k]
    else:
        raise InvalidInput(f"unknown mixing {spec.mixing!r}")
    sys = LTISystem(A, B, C)
    got = interaction_rank(impulse_family(sys, spec.n)).rank
    if got != k:
        raise RankMismatch(f"teacher has interaction rank {got}, requested {k}")
    return sys


@dataclass(frozen=True)
class TrainConfig:
    H: int
    r: int = 16
    steps: int = 5000
    learning_rate: float = 1e-2
    optimizer: str = "adaptive"  # or "plain_gd"
    batch: int = 16
    seed: int = 0
    loss_floor: float = 1e-12
    test_batch: int = 64
    log_every: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_schedule: str = "cosine"  # or "constant"
    final_lr_ratio: float = 1e-3

    def __post_init__(self):
        for name in ("H", "r", "steps", "batch", "test_batch", "log_every"):
            if getattr(self, name) < 1:
                raise InvalidInput(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise InvalidInput("learning_rate must be positive")
        if self.lr_schedule not in ("cosine", "constant"):
            raise InvalidInput(f"unknown lr_schedule {self.lr_schedule!r}")
        if not 0 < self.final_lr_ratio <= 1:
            raise InvalidInput("final_lr_ratio must lie in (0, 1]")
        if self.optimizer not in ("adaptive", "plain_gd"):
            raise InvalidInput(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainResult:
    final_mse: float
    loss_curve: list
    model: MultiHeadModel
    singular_values: np.ndarray
    steps_run: int
    initial_mse: float = field(default=None)


# -- student parameters ------------------------------------------------------

def init_student(H, r, n, p, d, seed):
    """Uniform init: tables in ``+-1/sqrt(r)``, values in ``+-1/sqrt(d)``."""
    if H < 1 or r < 1:
        raise InvalidInput("H and r must be >= 1")
    rng = make_rng(seed, 1)
    tb, vb = 1.0 / np.sqrt(r), 1.0 / np.sqrt(d)
    Phi = rng.uniform(-tb, tb, (H, n, r))
    Psi = rng.uniform(-tb, tb, (H, n, r))
    V = rng.uniform(-vb, vb, (H, p, d))
    return student_model(Phi, Psi, V)


def student_arrays(model):
    """Stack a positional-table model into ``(Phi, Psi, V)`` arrays of shape (H, ...)."""
    Phi = np.stack([np.asarray(h.generator.Phi) for h in model.heads])
    Psi = np.stack([np.asarray(h.generator.Psi) for h in model.heads])
    V = np.stack([h.V for h in model.heads])
    return Phi, Psi, V


def student_model(Phi, Psi, V):
    return MultiHeadModel(tuple(FactorizedHead(V[h], PositionalTable(Phi[h], Psi[h], causal=True))
                                for h in range(len(V))))


def pad_tables(model, r):
    """Zero-pad every head's tables to width ``r`` (wider tables are rejected)."""
    heads = []
    for h in model.heads:
        Phi, Psi = np.asarray(h.generator.Phi), np.asarray(h.generator.Psi)
        if Phi.shape[1] > r:
            raise InvalidInput(f"table width {Phi.shape[1]} exceeds student width {r}")
        pad = ((0, 0), (0, r - Phi.shape[1]))
        heads.append(FactorizedHead(h.V, PositionalTable(np.pad(Phi, pad), np.pad(Psi, pad), True)))
    return MultiHeadModel(tuple(heads))


def student_from_synthesis(teacher, n, H, r, method="modal"):
    """Exact construction for ``teacher`` loaded into an (H, r) student.

    Modal tables have width at most ``2m``, so they fit the default r for
    small teachers; other methods need ``r >= n``.
    """
    return pad_tables(synthesize(teacher, n, H, method).model, r)


# -- loss and gradients ------------------------------------------------------

def teacher_outputs(kernel_blocks, X):
    """Batched ``Y[b] = sum_j K_ij X[b, :, j]`` for ``X`` of shape (B, d, n)."""
    return np.einsum("ijpd,bdj->bpi", kernel_blocks, X)


def loss_and_grads(Phi, Psi, V, X, Y, with_grad=True):
    """Mean over the batch of ``|Y_hat - Y|_F^2 / (p n)`` and its gradients.

    ``A_h = M * (Phi_h Psi_h^T)`` with M the causal mask. With
    ``G = dL/dY_hat``: ``dV_h = sum_b G_b A_h X_b^T``,
    ``dA_h = M * sum_b G_b^T V_h X_b``, ``dPhi_h = dA_h Psi_h``,
    ``dPsi_h = dA_h^T Phi_h``.
    """
    B, p, n = Y.shape
    mask = np.tril(np.ones((n, n)))
    A = mask * (Phi @ Psi.transpose(0, 2, 1))               # (H, n, n)
    XA = np.einsum("bdj,hij->hbdi", X, A)                     # X_b A_h^T
    Yhat = np.einsum("hpd,hbdi->bpi", V, XA)
    R = Yhat - Y
    scale = 1.0 / (B * p * n)
    loss = float(np.sum(R * R) * scale)
    if not with_grad:
        return loss, None
    G = 2.0 * scale * R
    dV = np.einsum("bpi,hbdi->hpd", G, XA)
    GV = np.einsum("bpi,hpd->hbdi", G, V)                     # V_h^T G_b
    dA = mask * np.einsum("hbdi,bdj->hij", GV, X)
    dPhi = dA @ Psi
    dPsi = dA.transpose(0, 2, 1) @ Phi
    return loss, (dPhi, dPsi, dV)


def step_size(cfg, t):
    """Step size at step ``t`` (1-based): constant, or cosine-annealed to ``final_lr_ratio``."""
    if cfg.lr_schedule == "constant":
        return cfg.learning_rate
    frac = (t - 1) / max(cfg.steps - 1, 1)
    lo = cfg.final_lr_ratio
    return cfg.learning_rate * (lo + (1 - lo) * 0.5 * (1 + np.cos(np.pi * frac)))


def _adam(params, grads, state, t, cfg):
    lr = step_size(cfg, t)
    out = []
    for idx, (x, g) in enumerate(zip(params, grads)):
        m, v = state[idx]
        m = cfg.beta1 * m + (1 - cfg.beta1) * g
        v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
        state[idx] = (m, v)
        mhat = m / (1 - cfg.beta1 ** t)
        vhat = v / (1 - cfg.beta2 ** t)
        out.append(x - lr * mhat / (np.sqrt(vhat) + cfg.adam_eps))
    return out


def evaluate_mse(model, teacher, n, X):
    """Mean ``|Y_hat - Y|_F^2 / (p n)`` of ``model`` against ``teacher`` on a batch."""
    Phi, Psi, V = student_arrays(model)
    Y = teacher_outputs(materialize_lti(teacher, n).blocks, X)
    return loss_and_grads(Phi, Psi, V, X, Y, with_grad=False)[0]


def test_batch(cfg, d, n):
    return make_rng(cfg.seed, 3).standard_normal((cfg.test_batch, d, n))


def train_student(student, teacher, cfg):
    """Fit ``student`` to ``teacher`` outputs; returns a :class:`TrainResult`.

    ``adaptive`` draws a fresh unit-variance probe batch every step and uses
    first/second-moment steps. ``plain_gd`` keeps one fixed probe batch and
    halves the step until the batch loss decreases, so its recorded curve
    is non-increasing.
    """
    Phi, Psi, V = student_arrays(student)
    H, n, _ = Phi.shape
    p, d = V.shape[1:]
    if teacher.d != d or teacher.p != p:
        raise InvalidInput("student and teacher disagree on (p, d)")
    K = materialize_lti(teacher, n).blocks
    stream = make_rng(cfg.seed, 2)
    X_test = test_batch(cfg, d, n)
    Y_test = teacher_outputs(K, X_test)
    initial = loss_and_grads(Phi, Psi, V, X_test, Y_test, with_grad=False)[0]

    curve = []
    params = [Phi, Psi, V]
    state = [(np.zeros_like(x), np.zeros_like(x)) for x in params]
    if cfg.optimizer == "plain_gd":
        X = stream.standard_normal((cfg.batch, d, n))
        Y = teacher_outputs(K, X)
    steps_run = 0
    for step in range(1, cfg.steps + 1):
        if cfg.optimizer == "adaptive":
            X = stream.standard_normal((cfg.batch, d, n))
            Y = teacher_outputs(K, X)
            loss, grads = loss_and_grads(*params, X, Y)
            _check(loss, step)
            params = _adam(params, grads, state, step, cfg)
        else:
            loss, grads = loss_and_grads(*params, X, Y)
            _check(loss, step)
            lr = cfg.learning_rate
            for _ in range(60):
                trial = [x - lr * g for x, g in zip(params, grads)]
                new_loss = loss_and_grads(*trial, X, Y, with_grad=False)[0]
                if new_loss <= loss:
                    break
                lr *= 0.5
            else:
                trial, new_loss = params, loss
            params, loss = trial, new_loss
        steps_run = step
        if step % cfg.log_every == 0 or step == 1:
            curve.append(loss)
        if loss <= cfg.loss_floor:
            break
    model = student_model(*params)
    final = loss_and_grads(*params, X_test, Y_test, with_grad=False)[0]
    return TrainResult(final, curve, model, learned_operator_spectrum(model, n), steps_run, initial)


def _check(loss, step):
    if not np.isfinite(loss) or loss > DIVERGENCE_LOSS:
        raise Diverged(step, loss)


def learned_operator_spectrum(model, n):
    """Singular values of the lag-averaged kernel family of a positional-table model.

    ``W_hat(tau)`` is the mean of the blocks ``K_ij`` with ``i - j = tau``.
    """
    K = multihead_tensor(model, np.zeros((model.d, n))).blocks
    lags = np.stack([np.mean([K[i, i - tau] for i in range(tau, n)], axis=0) for tau in range(n)])
    return svd(lags.reshape(n, -1))[1]


# -- head sweep ---------------------------------------------------------------

SWEEP_COLUMNS = ("k", "H", "seed", "final_mse", "steps_run", "diverged")


def _run_cell(args):
    teacher_spec, cfg = args
    teacher = build_teacher(teacher_spec)
    student = init_student(cfg.H, cfg.r, teacher_spec.n, teacher_spec.p, teacher_spec.d, cfg.seed)
    try:
        res = train_student(student, teacher, cfg)
        return {"k": teacher_spec.k, "H": cfg.H, "seed": cfg.seed, "final_mse": res.final_mse,
                "steps_run": res.steps_run, "diverged": False}, res.model
    except Diverged as exc:
        return {"k": teacher_spec.k, "H": cfg.H, "seed": cfg.seed, "final_mse": float("nan"),
                "steps_run": exc.step, "diverged": True}, None


def head_sweep(k_list, H_list, base_cfg, seeds=3, n=32, d=4, p=4, teacher_seed=0,
               jobs=1, keep_models=False):
    """Train every (k, H, seed) cell; returns per-seed rows followed by median rows.

    Student seeds are ``base_cfg.seed + s`` for ``s < seeds``; one teacher
    per k. Diverged cells are recorded, not raised. With ``keep_models``
    the trained models are returned alongside, keyed by (k, H, seed).
    """
    if not k_list or not H_list:
        raise InvalidInput("k_list and H_list must be nonempty")
    cells = []
    for k in k_list:
        spec = TeacherSpec(k, n, d, p, seed=teacher_seed)
        for H in H_list:
            for s in range(seeds):
                cells.append((spec, replace(base_cfg, H=H, seed=base_cfg.seed + s)))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, cells))
    else:
        results = [_run_cell(c) for c in cells]
    rows = [r for r, _ in results]
    medians = []
    for k in k_list:
        for H in H_list:
            cell = [r for r in rows if r["k"] == k and r["H"] == H]
            good = [r["final_mse"] for r in cell if not r["diverged"]]
            medians.append({"k": k, "H": H, "seed": "median",
                            "final_mse": statistics.median(good) if good else float("nan"),
                            "steps_run": statistics.median(r["steps_run"] for r in cell),
                            "diverged": any(r["diverged"] for r in cell)})
    if keep_models:
        models = {(r["k"], r["H"], r["seed"]): m for r, m in results}
        return rows + medians, models
    return rows + medians


def median_table(rows):
    """``{(k, H): median final_mse}`` from sweep rows."""
    return {(r["k"], r["H"]): r["final_mse"] for r in rows if r["seed"] == "median"}
