"""Command-line entry point: ``seqkernel <subcommand> [flags]``.

Every subcommand writes its CSV (and optional SVG) into ``--out-dir`` along
with a ``manifest.json`` that records the merged configuration and the
sha256 of every emitted file. Exit codes: 0 pass, 1 numerical or
acceptance failure, 2 usage error.
"""

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import traceback
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .errors import SeqKernelError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


# -- helpers ---------------------------------------------------------------

def parse_int_list(text):
    """``"1,2,4"``, ``"1..9"`` or ``"1,2,4,...,256"`` (progression inferred) to a list of ints."""
    text = str(text).strip()
    if ".." in text and "..." not in text:
        lo, hi = (int(v) for v in text.split(".."))
        if hi < lo:
            raise ValueError(f"empty range {text!r}")
        return list(range(lo, hi + 1))
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise ValueError("empty integer list")
    if "..." not in parts:
        return [int(p) for p in parts]
    k = parts.index("...")
    head, tail = [int(p) for p in parts[:k]], [int(p) for p in parts[k + 1:]]
    if len(head) < 2 or len(tail) != 1:
        raise ValueError(f"cannot infer progression from {text!r}")
    stop = tail[0]
    geometric = (len(head) >= 3 and head[0] != 0 and head[1] * head[1] == head[0] * head[2]
                 and head[1] % head[0] == 0 and head[1] // head[0] > 1)
    out = list(head)
    if geometric:
        ratio = head[1] // head[0]
        while out[-1] * ratio <= stop:
            out.append(out[-1] * ratio)
    else:
        step = head[1] - head[0]
        if step <= 0:
            raise ValueError(f"progression must increase: {text!r}")
        while out[-1] + step <= stop:
            out.append(out[-1] + step)
    if out[-1] != stop:
        raise ValueError(f"{stop} is not a term of the progression in {text!r}")
    return out


def int_list(text):
    try:
        return parse_int_list(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def fmt(v):
    """CSV cell: shortest round-trip repr for floats, lowercase booleans."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(v)


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(row[c]) for c in columns])


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Collects emitted files for one invocation and writes the manifest."""

    def __init__(self, args):
        self.args = args
        self.started = datetime.now(timezone.utc).isoformat()
        self.outputs = []
        os.makedirs(args.out_dir, exist_ok=True)

    def path(self, name):
        return os.path.join(self.args.out_dir, name)

    def emitted(self, path):
        self.outputs.append(path)
        return path

    def finish(self, status):
        config = {k: v for k, v in sorted(vars(self.args).items()) if k not in ("func",)}
        manifest = {
            "command": self.args.command,
            "config": config,
            "seed": self.args.seed,
            "version": __version__,
            "started": self.started,
            "finished": datetime.now(timezone.utc).isoformat(),
            "exit_status": status,
            "outputs": {os.path.relpath(p, self.args.out_dir): sha256(p) for p in self.outputs},
        }
        with open(self.path("manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=1, default=str)
            fh.write("\n")


def _load_json(path, what):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SeqKernelError(f"cannot read {what} file {path!r}: {exc}")


def _system_or_default(path, default):
    from .dynamics import system_from_dict
    return default() if path is None else system_from_dict(_load_json(path, "system"))


def _svg(run, name, *args, **kwargs):
    from .plotting import write_svg
    write_svg(run.emitted(run.path(name)), *args, **kwargs)


# -- subcommands -------------------------------------------------------------

def cmd_verify(args, run):
    from .verify import run_suites
    results = run_suites(args.suite, seed=args.seed)
    width = max(len(f"{r.suite}/{r.name}") for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.suite + '/' + r.name:<{width}}  {r.detail}")
    rows = [{"suite": r.suite, "check": r.name, "passed": r.passed, "detail": r.detail} for r in results]
    write_csv(run.emitted(run.path(args.out)), ("suite", "check", "passed", "detail"), rows)
    failed = [r for r in results if not r.passed]
    if failed:
        first = failed[0]
        print(f"first failure: {first.suite}/{first.name}: {first.detail}", file=sys.stderr)
        return EXIT_FAIL
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def cmd_rank_gap(args, run):
    from .rank import single_head_best_fit, single_head_gap_oracle, rotation_witness
    sys_ = _system_or_default(args.system, lambda: rotation_witness(args.d))
    oracle, _ = single_head_gap_oracle(args.grid)
    rows, ok = [], True
    for n in args.n:
        for H in args.heads:
            fit = single_head_best_fit(sys_, n, heads=H, starts=args.starts, seed=args.seed)
            bound = math.sqrt(oracle) if H == 1 else 0.0
            passed = fit.error >= bound - 1e-3 if H == 1 else fit.error <= 1e-6
            ok &= passed
            rows.append({"n": n, "H": H, "min_error": fit.error, "analytic_bound": bound, "pass": passed})
            print(f"n={n} H={H} min_error={fit.error:.12g} bound={bound:.12g} {'pass' if passed else 'FAIL'}")
    write_csv(run.emitted(run.path(args.out)), ("n", "H", "min_error", "analytic_bound", "pass"), rows)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_equivalence(args, run):
    from .factorized import save_model
    from .kernel import impulse_family
    from .rank import interaction_rank, rotation_witness
    from .synthesis import synthesize, verify_equivalence
    sys_ = _system_or_default(args.system, rotation_witness)
    k = interaction_rank(impulse_family(sys_, args.n)).rank
    H = k if args.heads is None else args.heads
    kw = {"fallback": True} if args.method == "modal" else {}
    res = synthesize(sys_, args.n, H, args.method, **kw)
    rep = verify_equivalence(res, sys_, args.n, trials=args.trials, seed=args.seed)
    row = {"method": res.method, "H": H, "k": k, "feature_dim": res.feature_dim,
           "max_block_err": rep.max_block, "forward_err": rep.forward_err, "pass": rep.passed}
    write_csv(run.emitted(run.path(args.out)),
              ("method", "H", "k", "feature_dim", "max_block_err", "forward_err", "pass"), [row])
    save_model(res.model, run.emitted(run.path(args.model_out)), seed=args.seed)
    print(f"{res.method}: H={H} k={k} feature_dim={res.feature_dim} "
          f"max_block={rep.max_block:.3g} forward={rep.forward_err:.3g} "
          f"{'pass' if rep.passed else 'FAIL'} (worst block {rep.worst_block})")
    return EXIT_OK if rep.passed else EXIT_FAIL


def _default_decay_system():
    from .dynamics import LTISystem
    from .linalg import make_rng, random_orthogonal
    Q = random_orthogonal(4, make_rng(0, 11))
    return LTISystem(0.95 * Q, np.eye(4), np.eye(4))


def cmd_gradients(args, run):
    from .gradients import SWEEP_COLUMNS, AttentionParams, decay_sweep, log_slope
    from .linalg import spectral_norm
    sys_ = _system_or_default(args.system, _default_decay_system)
    if args.attn is None:
        attn = AttentionParams.random(sys_.d, 4, sys_.p, args.seed)
    else:
        data = _load_json(args.attn, "attention")
        try:
            attn = AttentionParams(*(np.asarray(data[k], dtype=float) for k in ("W_Q", "W_K", "V")))
        except KeyError as exc:
            raise SeqKernelError(f"attention file lacks {exc}")
    rows = decay_sweep(sys_, attn, args.distances, epsilon=args.epsilon, seed=args.seed)
    write_csv(run.emitted(run.path(args.out)), SWEEP_COLUMNS, rows)
    dist = [r["distance"] for r in rows]
    floor = spectral_norm(attn.V) - args.epsilon
    ok = all(r["attn_adversarial_norm"] >= floor for r in rows)
    ok &= all(r["ssm_norm"] <= r["bound"] * (1 + 1e-12) for r in rows)
    positive = [(t, r["ssm_norm"]) for t, r in zip(dist, rows) if r["ssm_norm"] > 0]
    if len(positive) >= 2:
        slope = log_slope(*zip(*positive))
        print(f"SSM log-norm slope {slope:.6g} (ln |A|_2 = {math.log(spectral_norm(sys_.A)):.6g})")
    print(f"attention adversarial min {min(r['attn_adversarial_norm'] for r in rows):.6g} "
          f">= |V|_2 - eps = {floor:.6g}: {'yes' if ok else 'NO'}")
    if args.plot:
        _svg(run, args.plot,
             [("SSM |J|", dist, [r["ssm_norm"] for r in rows]),
              ("attention adversarial |J|", dist, [r["attn_adversarial_norm"] for r in rows])],
             title="Jacobian norm vs distance", x_label="distance i - j",
             y_label="spectral norm", log_y=True)
    return EXIT_OK if ok else EXIT_FAIL


TRAIN_KEYS = ("r", "steps", "learning_rate", "optimizer", "batch", "loss_floor",
              "lr_schedule", "final_lr_ratio", "test_batch")


def cmd_train(args, run):
    from dataclasses import replace
    from .factorized import save_model
    from .training import SWEEP_COLUMNS, TrainConfig, head_sweep, median_table
    base = replace(TrainConfig(H=1, seed=args.seed),
                   **{k: getattr(args, k) for k in TRAIN_KEYS if getattr(args, k) is not None})
    out = head_sweep(args.k, args.heads, base, seeds=args.seeds, n=args.n, d=args.d, p=args.p,
                     teacher_seed=args.teacher_seed, jobs=args.jobs, keep_models=bool(args.save_models))
    rows, models = out if args.save_models else (out, {})
    write_csv(run.emitted(run.path(args.out)), SWEEP_COLUMNS, rows)
    for (k, H, seed), model in sorted(models.items()):
        if model is not None:
            save_model(model, run.emitted(run.path(f"model_k{k}_H{H}_s{seed}.json")), seed=seed)
    med = median_table(rows)
    for k in args.k:
        print(f"k={k}: " + "  ".join(f"H={H}:{med[(k, H)]:.3g}" for H in args.heads))
    if args.plot:
        _svg(run, args.plot,
             [(f"k={k}", args.heads, [med[(k, H)] for H in args.heads]) for k in args.k],
             title="median test MSE vs heads", x_label="heads H", y_label="test MSE", log_y=True)
    return EXIT_FAIL if any(r["diverged"] for r in rows) else EXIT_OK


def cmd_spectrum(args, run):
    from .factorized import load_model
    from .training import learned_operator_spectrum
    model = load_model(args.model)
    n = args.n
    if n is None:
        try:
            n = int(np.shape(model.heads[0].generator.Phi)[0])
        except AttributeError:
            raise SeqKernelError("--n is required for models without positional tables")
    S = learned_operator_spectrum(model, n)
    rows = [{"index": i, "singular_value": float(s)} for i, s in enumerate(S)]
    write_csv(run.emitted(run.path(args.out)), ("index", "singular_value"), rows)
    if args.tensor_out:
        from .factorized import multihead_tensor
        from .kernel import write_tensor_csv
        W = multihead_tensor(model, np.zeros((model.d, n)))
        write_tensor_csv(W, run.emitted(run.path(args.tensor_out)))
    above = int(np.sum(S > args.threshold * S[0])) if S[0] > 0 else 0
    print(f"{above} singular values above {args.threshold:g} * sigma_1")
    if args.plot:
        _svg(run, args.plot, [("singular value", list(range(len(S))), list(S))],
             title="learned operator spectrum", x_label="index", y_label="singular value", log_y=True)
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="root seed (default 0)")
    common.add_argument("--out-dir", default="out", help="directory for outputs and the manifest")
    common.add_argument("--jobs", type=int, default=1, help="worker processes where parallelism applies")
    common.add_argument("--config", default=None, help="JSON file of flag defaults; explicit flags win")

    parser = argparse.ArgumentParser(prog="seqkernel", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("verify", parents=[common], help="run the property suites")
    p.add_argument("--suite", action="append", default=None,
                   help="run only this suite (repeatable); default all")
    p.add_argument("--out", default="verify.csv")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("rank-gap", parents=[common], help="single-head separation on the witness")
    p.add_argument("--n", type=int_list, default=[2, 8, 32], help="sequence lengths, e.g. 2,8,32")
    p.add_argument("--heads", type=int_list, default=[1], help="head budgets (default 1)")
    p.add_argument("--d", type=int, default=2, help="witness dimension (default 2)")
    p.add_argument("--system", default=None, help="system JSON instead of the witness")
    p.add_argument("--starts", type=int, default=20)
    p.add_argument("--grid", type=int, default=360, help="oracle grid resolution (>= 360)")
    p.add_argument("--out", default="rank_gap.csv")
    p.set_defaults(func=cmd_rank_gap)

    p = sub.add_parser("equivalence", parents=[common], help="synthesize and certify a multi-head model")
    p.add_argument("--system", default=None, help="system JSON (default: the witness)")
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--heads", type=int, default=None, help="head count (default: interaction rank)")
    p.add_argument("--method", choices=("explicit", "rank", "modal"), default="explicit")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--out", default="equivalence.csv")
    p.add_argument("--model-out", default="model.json")
    p.set_defaults(func=cmd_equivalence)

    p = sub.add_parser("gradients", parents=[common], help="Jacobian decay sweep")
    p.add_argument("--system", default=None, help="system JSON (default: 0.95 x orthogonal, B = C = I)")
    p.add_argument("--attn", default=None, help="JSON with W_Q, W_K, V (default: seeded random)")
    p.add_argument("--distances", type=int_list, default=parse_int_list("1,2,4,...,256"))
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--out", default="gradients.csv")
    p.add_argument("--plot", default=None, help="SVG file name")
    p.set_defaults(func=cmd_gradients)

    p = sub.add_parser("train", parents=[common], help="teacher-student head sweep")
    p.add_argument("--k", type=int_list, default=[2, 4], help="teacher ranks")
    p.add_argument("--heads", type=int_list, default=list(range(1, 7)), help="head counts, e.g. 1..6")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--n", type=int, default=32)
    p.add_argument("--d", type=int, default=4)
    p.add_argument("--p", type=int, default=4)
    p.add_argument("--teacher-seed", type=int, default=0)
    p.add_argument("--r", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--lr", dest="learning_rate", type=float, default=None)
    p.add_argument("--optimizer", choices=("adaptive", "plain_gd"), default=None)
    p.add_argument("--lr-schedule", choices=("cosine", "constant"), default=None)
    p.add_argument("--final-lr-ratio", type=float, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--test-batch", type=int, default=None)
    p.add_argument("--loss-floor", type=float, default=None)
    p.add_argument("--save-models", action="store_true", help="write every trained model as JSON")
    p.add_argument("--out", default="train.csv")
    p.add_argument("--plot", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("spectrum", parents=[common], help="singular values of a saved model")
    p.add_argument("--model", required=True, help="model JSON")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--threshold", type=float, default=1e-2)
    p.add_argument("--out", default="spectrum.csv")
    p.add_argument("--tensor-out", default=None, help="also dump the kernel tensor as i,j,row,col,value")
    p.add_argument("--plot", default=None)
    p.set_defaults(func=cmd_spectrum)
    return parser


def parse_args(parser, argv):
    """Parse twice: once to find ``--config``, then with its values as defaults."""
    args = parser.parse_args(argv)
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config {args.config!r}: {exc}")
        if not isinstance(cfg, dict):
            parser.error("config file must hold a JSON object")
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        unknown = sorted(set(cfg) - set(vars(args)))
        if unknown:
            parser.error(f"unknown config keys: {', '.join(unknown)}")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        for key, value in cfg.items():
            if isinstance(value, str) and key in ("n", "heads", "k", "distances") and args.command != "equivalence":
                value = parse_int_list(value)
            sub.set_defaults(**{key: value})
        args = parser.parse_args(argv)
    return args


def _module_of(exc):
    tb = exc.__traceback__
    name = "seqkernel"
    while tb is not None:
        mod = tb.tb_frame.f_globals.get("__name__", "")
        if mod.startswith("seqkernel."):
            name = mod
        tb = tb.tb_next
    return name


def main(argv=None):
    parser = build_parser()
    args = parse_args(parser, argv)
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    run = Run(args)
    try:
        status = args.func(args, run)
    except SeqKernelError as exc:
        print(f"error in {_module_of(exc)}: {type(exc).__name__}: {exc}", file=sys.stderr)
        status = EXIT_FAIL
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"error in {_module_of(exc)}: {type(exc).__name__}: {exc}", file=sys.stderr)
        if os.environ.get("SEQKERNEL_DEBUG"):
            traceback.print_exc()
        status = EXIT_FAIL
    run.finish(status)
    return status


if __name__ == "__main__":
    sys.exit(main())
