"""Named property suites, one per module, run by ``seqkernel verify``.

Each check is a function of a seed returning ``(passed, detail)``. The
suites call into the modules through their module objects so a patched
function (fault injection) is what gets exercised.
"""

import time
from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag

from . import dynamics, factorized, gradients, kernel, linalg, rank, synthesis, training
from .errors import InsufficientHeads
from .linalg import make_rng

SUITE_ORDER = ("linalg", "kernel", "factorized", "dynamics", "rank", "synthesis",
               "gradients", "training")
_CHECKS = {name: [] for name in SUITE_ORDER}


@dataclass(frozen=True)
class CheckResult:
    suite: str
    name: str
    passed: bool
    detail: str
    seconds: float


def check(suite, name):
    def register(fn):
        _CHECKS[suite].append((name, fn))
        return fn
    return register


def rel(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(np.linalg.norm(b), 1e-300))


def _worst(values, tol, label="max rel err"):
    worst = max(values)
    return worst <= tol, f"{label} {worst:.3g} (tol {tol:g})"


def _system(rng, m_max=8, d_max=8, p_max=8):
    m, d, p = (int(rng.integers(1, hi + 1)) for hi in (m_max, d_max, p_max))
    return dynamics.random_lti(rng, m, d, p)


# -- linalg --------------------------------------------------------------------

@check("linalg", "spectral_norm = sigma_1")
def _spec(seed):
    errs = []
    for t in range(100):
        rng = make_rng(seed, 100, t)
        M = rng.standard_normal(tuple(rng.integers(1, 17, 2)))
        errs.append(abs(linalg.spectral_norm(M) - linalg.svd(M)[1][0]) / linalg.svd(M)[1][0])
    return _worst(errs, 1e-10)


@check("linalg", "svd reconstruction")
def _svd_rec(seed):
    errs = []
    for t in range(1000):
        rng = make_rng(seed, 101, t)
        M = rng.standard_normal(tuple(rng.integers(1, 17, 2)))
        U, S, Vt = linalg.svd(M)
        errs.append(rel(U @ np.diag(S) @ Vt, M))
    return _worst(errs, 1e-12)


@check("linalg", "eig residual")
def _eig(seed):
    errs = []
    for t in range(100):
        rng = make_rng(seed, 102, t)
        A = rng.standard_normal((int(rng.integers(1, 9)),) * 2)
        spec = linalg.eig_complex(A)
        scale = linalg.spectral_norm(A)
        res = np.linalg.norm(A @ spec.right_eigenvectors - spec.right_eigenvectors * spec.eigenvalues, axis=0)
        errs.append(float(res.max() / scale))
    return _worst(errs, 1e-8, "max residual / |A|")


# -- kernel --------------------------------------------------------------------

@check("kernel", "causality")
def _causal(seed):
    worst = 0.0
    for t in range(50):
        rng = make_rng(seed, 200, t)
        sys = _system(rng)
        n = int(rng.integers(2, 17))
        W = kernel.materialize_lti(sys, n)
        X = rng.standard_normal((sys.d, n))
        i = int(rng.integers(0, n - 1))
        X2 = X.copy()
        X2[:, i + 1:] += rng.standard_normal((sys.d, n - i - 1))
        Y1, Y2 = kernel.apply_tensor(W, X), kernel.apply_tensor(W, X2)
        worst = max(worst, float(np.abs(Y1[:, : i + 1] - Y2[:, : i + 1]).max()))
    return worst == 0.0, f"max change in y_0..y_i {worst:.3g}"


@check("kernel", "linearity")
def _linear(seed):
    errs = []
    for t in range(50):
        rng = make_rng(seed, 201, t)
        sys = _system(rng)
        n = int(rng.integers(1, 17))
        W = kernel.materialize_lti(sys, n)
        X1, X2 = rng.standard_normal((2, sys.d, n))
        a, b = rng.standard_normal(2)
        errs.append(rel(kernel.apply_tensor(W, a * X1 + b * X2),
                        a * kernel.apply_tensor(W, X1) + b * kernel.apply_tensor(W, X2)))
    return _worst(errs, 1e-12)


@check("kernel", "materialize_lti = lti_scan")
def _mat(seed):
    errs = []
    for t in range(100):
        rng = make_rng(seed, 202, t)
        sys = _system(rng)
        n = int(rng.integers(1, 33))
        X = rng.standard_normal((sys.d, n))
        errs.append(rel(kernel.apply_tensor(kernel.materialize_lti(sys, n), X),
                        dynamics.lti_scan(sys, X)))
    return _worst(errs, 1e-10)


# -- factorized ----------------------------------------------------------------

def _generators(rng, d, n):
    r = int(rng.integers(1, 5))
    return [
        factorized.Identity(),
        factorized.Toeplitz(np.concatenate([np.zeros(1), rng.standard_normal(2)])),
        factorized.SoftmaxAttention(rng.standard_normal((r, d)), rng.standard_normal((r, d)),
                                    scale=float(np.sqrt(r))),
        factorized.LinearAttention(rng.standard_normal((r, d)), rng.standard_normal((r, d)),
                                   "elu_plus_one", "elu_plus_one", causal=bool(rng.integers(2))),
        factorized.PositionalTable(rng.standard_normal((n, r)), rng.standard_normal((n, r))),
        factorized.SeparableKAN(tuple(
            (factorized.BasisFunction("tanh", tuple(rng.standard_normal(d)), bias=0.1),
             factorized.BasisFunction("poly", tuple(rng.standard_normal(d)), (0.5, 1.0, -0.2)))
            for _ in range(2))),
    ]


@check("factorized", "softmax rows stochastic")
def _stoch(seed):
    worst = 0.0
    ok = True
    for t in range(50):
        rng = make_rng(seed, 300, t)
        n = int(rng.integers(1, 20))
        A = factorized.softmax_rows(5 * rng.standard_normal((n, n)), causal=True)
        worst = max(worst, float(np.abs(A.sum(axis=1) - 1).max()))
        ok &= bool(np.all(A >= 0) and np.all(A <= 1) and np.all(np.triu(A, 1) == 0))
    return ok and worst <= 1e-12, f"max |row sum - 1| {worst:.3g}"


@check("factorized", "tensor path = factorized path")
def _fact(seed):
    errs = []
    for t in range(100):
        rng = make_rng(seed, 301, t)
        d, p, n = (int(v) for v in rng.integers(1, 6, 3))
        n += 2
        X = rng.standard_normal((d, n))
        V = rng.standard_normal((p, d))
        for g in _generators(rng, d, n):
            A = g.weights(X)
            errs.append(rel(kernel.apply_tensor(factorized.factorized_tensor(A, V), X),
                            factorized.apply_factorized(A, V, X)))
    return _worst(errs, 1e-12)


@check("factorized", "KAN reordering")
def _kan(seed):
    errs = []
    for t in range(50):
        rng = make_rng(seed, 302, t)
        d, p, n = 3, 2, int(rng.integers(1, 12))
        X = rng.standard_normal((d, n))
        V = rng.standard_normal((p, d))
        g = _generators(rng, d, n)[-1]
        errs.append(rel(factorized.apply_kan(X, g.pairs, V),
                        factorized.apply_factorized(g.weights(X), V, X)))
    return _worst(errs, 1e-12)


@check("factorized", "linear attention fast path")
def _linfast(seed):
    errs = []
    for t in range(100):
        rng = make_rng(seed, 303, t)
        d, r, p, n = 4, 3, 2, int(rng.integers(1, 20))
        X = rng.standard_normal((d, n))
        W_Q, W_K, V = rng.standard_normal((r, d)), rng.standard_normal((r, d)), rng.standard_normal((p, d))
        phi = list(factorized.FEATURE_MAPS)[t % len(factorized.FEATURE_MAPS)]
        causal = bool(t % 2)
        slow = factorized.apply_factorized(
            factorized.weights_linear_attention(X, W_Q, W_K, phi, phi, causal), V, X)
        fast = factorized.apply_linear_attention_fast(X, W_Q, W_K, V, phi, phi, causal)
        errs.append(rel(fast, slow))
    return _worst(errs, 1e-10)


@check("factorized", "concat + W_O = sum of heads")
def _concat(seed):
    errs = []
    for t in range(50):
        rng = make_rng(seed, 304, t)
        d, p, n, H = 3, 2, int(rng.integers(2, 10)), int(rng.integers(1, 4))
        X = rng.standard_normal((d, n))
        gens = [_generators(rng, d, n)[int(rng.integers(0, 6))] for _ in range(H)]
        vals = [rng.standard_normal((int(rng.integers(1, 4)), d)) for _ in range(H)]
        W_O = rng.standard_normal((p, sum(v.shape[0] for v in vals)))
        model = factorized.absorb_output_projection(gens, vals, W_O)
        errs.append(rel(factorized.apply_multihead(model, X),
                        factorized.apply_multihead_concat(X, gens, vals, W_O)))
    return _worst(errs, 1e-12)


# -- dynamics ------------------------------------------------------------------

@check("dynamics", "lti_scan≡lti_convolve")
def _duality(seed):
    errs = []
    for t in range(200):
        rng = make_rng(seed, 400, t)
        sys = _system(rng)
        X = rng.standard_normal((sys.d, int(rng.integers(1, 33))))
        errs.append(rel(dynamics.lti_convolve(sys, X), dynamics.lti_scan(sys, X)))
    return _worst(errs, 1e-10)


@check("dynamics", "selective scan with constant rules = lti_scan")
def _sel(seed):
    errs = []
    for t in range(50):
        rng = make_rng(seed, 401, t)
        sys = _system(rng)
        X = rng.standard_normal((sys.d, int(rng.integers(1, 33))))
        errs.append(rel(dynamics.selective_scan(dynamics.SelectiveSystem.from_lti(sys), X),
                        dynamics.lti_scan(sys, X)))
    return _worst(errs, 1e-12)


@check("dynamics", "superposition")
def _super(seed):
    errs = []
    for t in range(50):
        rng = make_rng(seed, 402, t)
        sys = _system(rng)
        n = int(rng.integers(1, 33))
        X1, X2 = rng.standard_normal((2, sys.d, n))
        a, b = rng.standard_normal(2)
        errs.append(rel(dynamics.lti_scan(sys, a * X1 + b * X2),
                        a * dynamics.lti_scan(sys, X1) + b * dynamics.lti_scan(sys, X2)))
    return _worst(errs, 1e-12)


# -- rank ----------------------------------------------------------------------

@check("rank", "rank invariant under recombination")
def _recomb(seed):
    bad = 0
    for t in range(20):
        rng = make_rng(seed, 500, t)
        sys = _system(rng, m_max=6)
        n = int(rng.integers(2, 17))
        fam = kernel.impulse_family(sys, n)
        G = rng.standard_normal((n, n)) + n * np.eye(n)
        mixed = np.einsum("st,tpd->spd", G, fam)
        bad += rank.interaction_rank(fam).rank != rank.interaction_rank(mixed).rank
    return bad == 0, f"{bad} of 20 trials changed rank"


@check("rank", "projection error endpoints")
def _proj(seed):
    ok = True
    for t in range(20):
        rng = make_rng(seed, 501, t)
        fam = kernel.impulse_family(_system(rng), int(rng.integers(1, 17)))
        rep = rank.interaction_rank(fam)
        ok &= rank.projection_error(fam, rep.rank) <= rep.threshold * rep.singular_values[0] * np.sqrt(fam.shape[0])
        ok &= abs(rank.projection_error(fam, 0) - np.linalg.norm(fam)) <= 1e-12 * np.linalg.norm(fam)
    return bool(ok), "rank-level error below threshold, zero-head error = |family|_F"


@check("rank", "single-head gap oracle")
def _gap(seed):
    vals = [rank.single_head_gap_oracle(res)[0] for res in (360, 720, 1000)]
    worst = max(abs(v - 1) for v in vals)
    return worst <= 1e-6, f"max |min - 1| {worst:.3g}"


# -- synthesis -----------------------------------------------------------------

def _ranked_system(seed, t):
    rng = make_rng(seed, 600, t)
    sys = _system(rng)
    n = int(rng.integers(8, 33))
    return sys, n, rank.interaction_rank(kernel.impulse_family(sys, n)).rank


@check("synthesis", "succeeds iff H >= k")
def _boundary(seed):
    bad = []
    for t in range(20):
        sys, n, k = _ranked_system(seed, t)
        res = synthesis.synthesize_explicit(sys, n, k)
        if res.certificate[0] > 1e-9:
            bad.append(t)
        if k > 1:
            try:
                synthesis.synthesize_explicit(sys, n, k - 1)
                bad.append(t)
            except InsufficientHeads:
                pass
            fam = kernel.impulse_family(sys, n)
            _, err = synthesis.synthesize_truncated(sys, n, k - 1)
            if err < rank.projection_error(fam, k - 1) - 1e-9:
                bad.append(t)
    return not bad, f"failing systems {bad}" if bad else "20 systems"


@check("synthesis", "lag coefficients reproduce W(tau)")
def _coef(seed):
    errs = []
    for t in range(20):
        sys, n, _ = _ranked_system(seed, t)
        fam = kernel.impulse_family(sys, n)
        rep = rank.interaction_rank(fam)
        c = synthesis.lag_coefficients(fam, rep.basis)
        errs.append(float(np.linalg.norm(np.einsum("th,hpd->tpd", c, rep.basis) - fam)
                          / np.linalg.norm(fam)))
    return _worst(errs, 1e-10, "max residual")


def _modal_system(rng, m):
    """Diagonalizable real transition with eigenvalue magnitudes in [0.3, 1]."""
    blocks, size = [], 0
    while size < m:
        if m - size >= 2 and rng.random() < 0.5:
            z = rng.uniform(0.3, 1.0) * np.exp(1j * rng.uniform(0.2, 3.0))
            blocks.append(np.array([[z.real, -z.imag], [z.imag, z.real]]))
        else:
            blocks.append(np.array([[rng.uniform(0.3, 1.0) * rng.choice([-1, 1])]]))
        size += len(blocks[-1])
    D = block_diag(*blocks)
    P = rng.standard_normal((m, m)) + 2 * np.eye(m)
    return dynamics.LTISystem(P @ D @ np.linalg.inv(P), rng.standard_normal((m, 3)),
                              rng.standard_normal((3, m)))


@check("synthesis", "modal = explicit coefficients")
def _modal(seed):
    errs = []
    for t in range(20):
        rng = make_rng(seed, 601, t)
        sys = _modal_system(rng, int(rng.integers(1, 7)))
        n = 16
        k = rank.interaction_rank(kernel.impulse_family(sys, n)).rank
        res = synthesis.synthesize_modal(sys, n, k)
        errs.append(rel(synthesis.modal_lag_kernels(res), res.coefficients))
    return _worst(errs, 1e-8)


@check("synthesis", "modal weights translation invariant")
def _transl(seed):
    worst = 0.0
    for t in range(20):
        rng = make_rng(seed, 602, t)
        sys = _modal_system(rng, int(rng.integers(1, 7)))
        n = 16
        k = rank.interaction_rank(kernel.impulse_family(sys, n)).rank
        res = synthesis.synthesize_modal(sys, n, k)
        for head in res.model.heads:
            A = head.generator.weights(np.zeros((sys.d, n))).A
            scale = max(np.abs(A).max(), 1e-300)
            worst = max(worst, float(np.abs(np.tril(A[1:, 1:] - A[:-1, :-1])).max() / scale))
    return _worst([worst], 1e-12, "max relative shift defect")


# -- gradients -----------------------------------------------------------------

@check("gradients", "SSM Jacobian = finite difference")
def _fd_ssm(seed):
    errs = []
    for t in range(50):
        rng = make_rng(seed, 700, t)
        sys = dynamics.random_lti(rng, 4, 3, 2)
        n = int(rng.integers(2, 10))
        X = rng.standard_normal((3, n))
        i = int(rng.integers(0, n))
        j = int(rng.integers(0, i + 1))
        J = gradients.ssm_jacobian(sys, i, j).J
        errs.append(gradients.relative_error(gradients.fd_jacobian(gradients.ssm_forward(sys), X, i, j).J, J))
    return _worst(errs, 1e-8)


@check("gradients", "attention Jacobian = finite difference")
def _fd_attn(seed):
    errs = []
    for t in range(50):
        rng = make_rng(seed, 701, t)
        d, r, p = 3, 2, 2
        attn = gradients.AttentionParams.random(d, r, p, int(rng.integers(1 << 30)))
        n = int(rng.integers(2, 10))
        X = rng.standard_normal((d, n))
        i = int(rng.integers(0, n))
        j = int(rng.integers(0, i + 1))
        J = gradients.attention_jacobian(X, attn.W_Q, attn.W_K, attn.V, i, j).J
        fwd = gradients.causal_attention_forward(attn.W_Q, attn.W_K, attn.V)
        errs.append(gradients.relative_error(gradients.fd_jacobian(fwd, X, i, j).J, J))
    return _worst(errs, 1e-5)


@check("gradients", "tanh RNN Jacobian = finite difference")
def _fd_rnn(seed):
    errs = []
    for t in range(50):
        rng = make_rng(seed, 702, t)
        m, d, p, n = 4, 3, 2, int(rng.integers(2, 10))
        W, U, C = rng.standard_normal((m, m)) / 2, rng.standard_normal((m, d)), rng.standard_normal((p, m))
        X = rng.standard_normal((d, n))
        i = int(rng.integers(0, n))
        j = int(rng.integers(0, i + 1))
        J = gradients.rnn_tanh_jacobian(W, U, C, X, i, j).J
        errs.append(gradients.relative_error(
            gradients.fd_jacobian(gradients.rnn_forward(W, U, C), X, i, j).J, J))
    return _worst(errs, 1e-5)


@check("gradients", "submultiplicative bound")
def _bound(seed):
    viol = 0
    for t in range(50):
        sys = dynamics.random_lti(make_rng(seed, 703, t), 4, 3, 2, radius=0.95)
        for tau in range(0, 64, 7):
            rep = gradients.ssm_jacobian(sys, tau, 0)
            viol += rep.norm2 > rep.bound * (1 + 1e-12)
    return viol == 0, f"{viol} violations"


@check("gradients", "adversarial lower bound and alpha formula")
def _adv(seed):
    bad, alpha_err = 0, 0.0
    for t, (eps, tau) in enumerate([(e, tau) for e in (0.1, 1e-3, 1e-6) for tau in (10, 100, 250)]):
        attn = gradients.AttentionParams.random(4, 3, 4, seed + t)
        adv = gradients.adversarial_input(attn.W_Q, attn.W_K, attn.V, tau, 0, epsilon=eps, seed=seed)
        bad += adv.achieved_norm < linalg.spectral_norm(attn.V) - eps
        s_self = float(adv.u @ adv.a_vec)
        want = gradients.alpha_closed_form(adv.gamma, tau, s_self)
        alpha_err = max(alpha_err, abs(adv.alpha - want) / want)
    return bad == 0 and alpha_err <= 1e-12, f"{bad} below |V| - eps, alpha rel err {alpha_err:.3g}"


# -- training ------------------------------------------------------------------

@check("training", "analytic gradients = finite difference")
def _train_fd(seed):
    errs = []
    for t in range(20):
        rng = make_rng(seed, 800, t)
        H, n, r, p, d, B = 2, 5, 3, 2, 2, 3
        Phi, Psi = rng.standard_normal((2, H, n, r))
        V = rng.standard_normal((H, p, d))
        X, Y = rng.standard_normal((B, d, n)), rng.standard_normal((B, p, n))
        _, grads = training.loss_and_grads(Phi, Psi, V, X, Y)
        params = [Phi, Psi, V]
        for k, g in enumerate(grads):
            num = np.zeros_like(g)
            for idx in np.ndindex(g.shape):
                hi = [q.copy() for q in params]
                lo = [q.copy() for q in params]
                hi[k][idx] += 1e-6
                lo[k][idx] -= 1e-6
                num[idx] = (training.loss_and_grads(*hi, X, Y, False)[0]
                            - training.loss_and_grads(*lo, X, Y, False)[0]) / 2e-6
            errs.append(rel(g, num))
    return _worst(errs, 1e-5)


@check("training", "H >= k reachable by synthesis")
def _reach(seed):
    worst = 0.0
    X = make_rng(seed, 801).standard_normal((64, 4, 32))
    for k in (2, 4):
        teacher = training.build_teacher(training.TeacherSpec(k, seed=seed))
        for H in (k, k + 1):
            model = training.student_from_synthesis(teacher, 32, H, 16)
            worst = max(worst, training.evaluate_mse(model, teacher, 32, X))
    return worst <= 1e-9, f"max MSE {worst:.3g}"


@check("training", "deterministic loss curve")
def _determ(seed):
    teacher = training.build_teacher(training.TeacherSpec(2, n=8, seed=seed))
    cfg = training.TrainConfig(H=2, steps=40, seed=seed)
    curves = [training.train_student(training.init_student(2, 16, 8, 4, 4, seed), teacher, cfg).loss_curve
              for _ in range(2)]
    return curves[0] == curves[1], f"{len(curves[0])} recorded losses"


@check("training", "H < k stays above projection floor")
def _floor(seed):
    n = 16
    teacher = training.build_teacher(training.TeacherSpec(4, n=n, seed=seed))
    floor = rank.projection_error(kernel.impulse_family(teacher, n), 2) ** 2 / (4 * n)
    res = training.train_student(training.init_student(2, 8, n, 4, 4, seed), teacher,
                                 training.TrainConfig(H=2, r=8, steps=300, seed=seed))
    return res.final_mse >= 0.5 * floor, f"final {res.final_mse:.3g} vs floor {floor:.3g}"


# -- runner --------------------------------------------------------------------

def suite_names():
    return SUITE_ORDER


def run_suites(names=None, seed=0):
    """Run the chosen suites (all by default) and return one :class:`CheckResult` per check."""
    names = SUITE_ORDER if names is None else tuple(names)
    unknown = [s for s in names if s not in _CHECKS]
    if unknown:
        raise KeyError(f"unknown suite(s): {', '.join(unknown)}")
    out = []
    for suite in names:
        for name, fn in _CHECKS[suite]:
            t0 = time.perf_counter()
            try:
                ok, detail = fn(seed)
            except Exception as exc:  # a crashing check is a failing check
                ok, detail = False, f"{type(exc).__name__}: {exc}"
            out.append(CheckResult(suite, name, bool(ok), detail, time.perf_counter() - t0))
    return out
