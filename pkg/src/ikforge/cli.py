"""Command-line front end: ``ikforge {info,gen,train,solve,eval,traj}``.

Exit status: 0 on success, 1 on usage errors, 2 on runtime failures.
"""

from __future__ import annotations

import os

_threads = os.environ.get("IKFORGE_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import sys  # noqa: E402


from ikforge import __version__, analytical, bench, datasets, distal, numerical  # noqa: E402
from ikforge.chain import ChainSpecError, Pose, forward_kinematics, is_feasible, load_chain  # noqa: E402
from ikforge.metrics import LossWeights, orientation_error, position_error  # noqa: E402


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        vals = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("widths must be >= 1")
    return vals


def _pose(values):
    if len(values) != 7:
        raise UsageError("a pose needs 7 numbers: px py pz qw qx qy qz")
    return Pose(values[:3], values[3:])


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for all randomness (default 0)")
    common.add_argument("--chain", default="planar3", help="builtin chain name or chain file")
    common.add_argument("--out", help="output file (default: stdout where applicable)")

    parser = _Parser(prog="ikforge", description="Inverse kinematics toolkit.")
    parser.add_argument("--version", action="version", version=f"ikforge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("info", parents=[common], help="print a chain summary")

    g = sub.add_parser("gen", parents=[common], help="generate a dataset CSV")
    g.add_argument("--kind", choices=datasets.KINDS, default="uniform")
    g.add_argument("--count", type=int, default=1000)
    g.add_argument("--radius", type=_floats, help="unreachable radius range lo,hi (x reach)")
    g.add_argument("--sigma", type=float, default=datasets.NONSINGULAR,
                   help="nonsingular threshold on the smallest singular value")
    g.add_argument("--start", type=float, nargs=7, metavar="V", help="trajectory start pose")
    g.add_argument("--end", type=float, nargs=7, metavar="V", help="trajectory end pose")

    t = sub.add_parser("train", parents=[common], help="train a distal-teaching model")
    t.add_argument("--data", required=True, help="training dataset CSV")
    t.add_argument("--hidden", type=_ints, help="hidden widths, e.g. 256,256 (default: chain preset)")
    t.add_argument("--activation", choices=sorted(distal.ACTIVATIONS),
                   help="hidden activation (default: chain preset, else relu)")
    t.add_argument("--weight-decay", type=float,
                   help="decoupled weight decay (default: chain preset, else 0)")
    t.add_argument("--w", type=float, default=LossWeights.w, help="position weight")
    t.add_argument("--lam", type=float, default=LossWeights.lam, help="joint-limit penalty weight")
    t.add_argument("--lr", type=float, default=distal.TrainOpts.learning_rate)
    t.add_argument("--batch-size", type=int, default=distal.TrainOpts.batch_size)
    t.add_argument("--epochs", type=int, default=distal.TrainOpts.max_epochs)
    t.add_argument("--val-fraction", type=float, default=distal.TrainOpts.validation_fraction)
    t.add_argument("--patience", type=int, default=distal.TrainOpts.patience)
    t.add_argument("--schedule", choices=distal.SCHEDULES, default=distal.TrainOpts.schedule)
    t.add_argument("--unreachable", type=int, default=0,
                   help="swap this many unreachable poses into the training set")
    t.add_argument("--quiet", action="store_true")

    s = sub.add_parser("solve", parents=[common], help="solve a single pose")
    s.add_argument("--pose", type=float, nargs=7, required=True, metavar="V",
                   help="px py pz qw qx qy qz")
    _method_args(s)

    e = sub.add_parser("eval", parents=[common], help="evaluate a solver on a dataset")
    e.add_argument("--data", required=True, help="dataset CSV")
    e.add_argument("--batch", type=int, default=0, help="batch size for the distal solver")
    e.add_argument("--format", choices=("csv", "markdown"), default="csv")
    e.add_argument("--timed", action="store_true", help="sequential single-threaded timing run")
    _method_args(e)
    _threshold_args(e)

    tr = sub.add_parser("traj", parents=[common], help="trajectory consistency run")
    tr.add_argument("--start", type=float, nargs=7, required=True, metavar="V")
    tr.add_argument("--end", type=float, nargs=7, required=True, metavar="V")
    tr.add_argument("--waypoints", type=int, default=100)
    tr.add_argument("--jump", type=float, default=bench.JUMP_THRESHOLD, help="discontinuity threshold (rad)")
    tr.add_argument("--format", choices=("csv", "markdown"), default="csv")
    _method_args(tr)
    _threshold_args(tr)
    return parser


def _method_args(p):
    p.add_argument("--method", default="numerical",
                   choices=("analytical", "numerical", "pinv", "sqp", "combined", "distal"))
    p.add_argument("--model", help="model file for --method distal")
    p.add_argument("--max-time", type=float, default=numerical.NumericalOptions.max_time,
                   help="numerical time budget per query (s)")


def _threshold_args(p):
    p.add_argument("--pos-tol", type=float, default=bench.Thresholds.pos)
    p.add_argument("--ori-tol", type=float, default=bench.Thresholds.ori)


def _header(args, **extra):
    cfg = {k: v for k, v in vars(args).items() if k not in ("out",) and v is not None}
    cfg.update(extra)
    return f"# ikforge {__version__} " + " ".join(
        f"{k}={_compact(v)}" for k, v in sorted(cfg.items())) + "\n"


def _compact(v):
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    return str(v).replace(" ", "_")


def _emit(args, text):
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _solver(args, chain):
    model = None
    if args.method == "distal":
        if not args.model:
            raise UsageError("--method distal needs --model")
        model = distal.load_model(args.model, chain)
    kw = {}
    if args.method in ("numerical", "pinv", "sqp", "combined"):
        kw = {"max_time": args.max_time, "restart_seed": args.seed}
    return bench.make_solver(chain, args.method, model, **kw)


def cmd_info(args, chain):
    lines = [f"chain: {chain.name}", f"dof: {chain.dof}", f"reach: {chain.total_length:.6g} m",
             f"planar: {'yes' if chain.is_planar else 'no'}"]
    closed = [k for k in ("planar3", "wrist6") if analytical._geometry(chain, k)[1] is None]
    lines.append(f"closed-form solver: {closed[0] if closed else 'none'}")
    lines.append("joints:")
    for j in chain.joints:
        ax = " ".join(f"{v:g}" for v in j.axis)
        lines.append(f"  {j.name}: axis ({ax}) limits [{j.limit_lo:.6g}, {j.limit_hi:.6g}]")
    _emit(args, "\n".join(lines) + "\n")


def cmd_gen(args, chain):
    if args.count < 1 and args.kind != "trajectory":
        raise UsageError("--count must be >= 1")
    if args.kind == "uniform":
        data = datasets.sample_uniform(chain, args.count, args.seed)
    elif args.kind == "singular":
        data = datasets.make_singular_set(chain, args.count, args.seed)
    elif args.kind == "nonsingular":
        data = datasets.make_nonsingular_set(chain, args.count, args.seed, args.sigma)
    elif args.kind == "unreachable":
        data = datasets.make_unreachable_set(chain, args.count, args.radius, args.seed)
    else:
        if args.start is None or args.end is None:
            raise UsageError("--kind trajectory needs --start and --end")
        data = datasets.make_line_trajectory(chain, _pose(args.start), _pose(args.end), args.count)
        data.seed = args.seed
    _emit(args, datasets.write_csv(data, None, **{"count": args.count}))


def cmd_train(args, chain):
    if not args.out:
        raise UsageError("train needs --out for the model file")
    data = datasets.read_csv(args.data, chain)
    if args.unreachable:
        extra = datasets.make_unreachable_set(chain, args.unreachable, seed=args.seed)
        data = datasets.swap_in_unreachable(data, extra, args.seed)
    preset = distal.TRAINING_PRESETS.get(chain.name, {})
    activation = args.activation or preset.get("activation", distal.MlpSpec.activation)
    decay = preset.get("weight_decay", 0.0) if args.weight_decay is None else args.weight_decay
    spec = distal.MlpSpec.for_chain(chain, args.hidden, activation=activation, seed=args.seed)
    opts = distal.TrainOpts(weights=LossWeights(args.w, args.lam), learning_rate=args.lr,
                            batch_size=args.batch_size, max_epochs=args.epochs,
                            validation_fraction=args.val_fraction, patience=args.patience,
                            schedule=args.schedule, weight_decay=decay, seed=args.seed)

    def progress(epoch, tr, va):
        if not args.quiet:
            print(f"epoch {epoch}: train {tr:.6g} validation {va:.6g}", file=sys.stderr)

    model = distal.train(chain, data, spec, opts, callback=progress)
    model.meta.update({"chain": chain.name, "data": os.path.basename(args.data),
                       "hidden": ",".join(map(str, spec.hidden)), "unreachable": args.unreachable})
    distal.save_model(model, args.out)
    print(f"trained {len(model.history)} epochs; model written to {args.out}")


def cmd_solve(args, chain):
    target = _pose(args.pose)
    lines = []
    if args.method == "analytical":
        result = analytical.solve(chain, target)
        lines.append(f"branches: {len(result)}")
        configs = result.solutions
    else:
        solver = _solver(args, chain)
        configs = [solver(target)]
    for i, c in enumerate(configs):
        f = forward_kinematics(chain, c)
        vals = " ".join(repr(float(v)) for v in c)
        lines.append(f"[{i}] {vals}  eps_pos={position_error(f, target):.3g} "
                     f"eps_ori={orientation_error(f, target):.3g} "
                     f"feasible={'yes' if is_feasible(chain, c) else 'no'}")
    _emit(args, _header(args) + "\n".join(lines) + "\n")


def cmd_eval(args, chain):
    data = datasets.read_csv(args.data, chain)
    data.meta["label"] = os.path.splitext(os.path.basename(args.data))[0]
    solver = _solver(args, chain)
    thresholds = bench.Thresholds(args.pos_tol, args.ori_tol)
    reports = [bench.evaluate(solver, data, thresholds)]
    if args.batch and solver.batch:
        reports.append(bench.evaluate(solver, data, thresholds, batch_size=args.batch))
    _emit(args, _header(args) + bench.emit_report(reports, args.format))


def cmd_traj(args, chain):
    data = datasets.make_line_trajectory(chain, _pose(args.start), _pose(args.end), args.waypoints)
    data.meta["label"] = f"{chain.name}-line{args.waypoints}"
    solver = _solver(args, chain)
    report, _ = bench.evaluate_trajectory(solver, data, bench.Thresholds(args.pos_tol, args.ori_tol),
                                          args.jump)
    _emit(args, _header(args) + bench.emit_report(report, args.format))


COMMANDS = {"info": cmd_info, "gen": cmd_gen, "train": cmd_train, "solve": cmd_solve,
            "eval": cmd_eval, "traj": cmd_traj}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(err, file=sys.stderr)
        return 1
    except SystemExit as done:  # --help / --version
        return int(done.code or 0)
    try:
        chain = load_chain(args.chain)
        COMMANDS[args.command](args, chain)
    except UsageError as err:
        print(f"ikforge: error: {err}", file=sys.stderr)
        return 1
    except (OSError, ValueError, ChainSpecError, RuntimeError) as err:
        print(f"ikforge: {type(err).__name__}: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
