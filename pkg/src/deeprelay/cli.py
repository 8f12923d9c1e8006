"""Command-line front end: ``deeprelay <command> ...``.

Commands: generate, train, optimize-linear, evaluate, transfer. Every command
accepts ``--seed``, ``--out`` and ``--config FILE``; a config file supplies
defaults (``key value...`` per line, keys are long option names) and explicit
flags win. Exit codes: 0 ok, 2 usage, 3 numeric failure, 4 I/O.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _user_map(items, allowed, what):
    """``['user1=bpsk', 'user2=pam']`` -> ``{0: 'bpsk', 1: 'pam'}``."""
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key.startswith("user") or not key[4:].isdigit() or int(key[4:]) < 1:
            raise UsageError(f"bad {what} assignment {item!r}; expected userN=<kind>")
        if value not in allowed:
            raise UsageError(f"unknown {what} {value!r}; choose from {', '.join(allowed)}")
        out[int(key[4:]) - 1] = value
    return out


def _per_user(mapping, M, default):
    extra = [m for m in mapping if m >= M]
    if extra:
        raise UsageError(f"network has {M} receivers; no user{extra[0] + 1}")
    return tuple(mapping.get(m, default[m] if m < len(default) else default[-1]) for m in range(M))


def parse_grid(text) -> np.ndarray:
    """``'0:30:2'`` (inclusive stop) or ``'10,12.5,15'`` -> array of dB values."""
    try:
        if ":" in text:
            start, stop, step = (float(t) for t in text.split(":"))
            if step <= 0:
                raise UsageError("grid step must be positive")
            grid = np.arange(start, stop + step / 2, step)
        else:
            grid = np.array([float(t) for t in text.split(",") if t.strip()])
    except ValueError:
        raise UsageError(f"cannot parse grid {text!r}") from None
    if grid.size == 0:
        raise UsageError("noise grid is empty")
    if np.any(np.diff(grid) <= 0):
        raise UsageError("noise grid must be strictly increasing")
    return grid


def _sigma2(args):
    from .network import NoiseModel

    if args.inv_sigma2_db is not None:
        return NoiseModel.from_inv_db(args.inv_sigma2_db).sigma2
    if args.sigma2 < 0:
        raise UsageError("sigma2 must be >= 0")
    return args.sigma2


def _noise_flags(p, default=0.05):
    p.add_argument("--sigma2", type=float, default=default, help="noise variance at every relay and receiver")
    p.add_argument("--inv-sigma2-db", type=float, default=None, help="noise given as 1/sigma^2 in dB (overrides --sigma2)")


def _common(p, out_help):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help=out_help)
    p.add_argument("--config", default=None, help="structured-text config file with option defaults")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deeprelay", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a network file")
    _common(p, "network file to write")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--preset", choices=("fig3", "fig4"))
    src.add_argument("--spatial", action="store_true", help="random relays in a sector with directional antennas")
    p.add_argument("--relays", type=int, default=100)
    p.add_argument("--receivers", type=int, default=2)
    p.add_argument("--radius", type=float, default=20.0)
    p.add_argument("--sector", type=float, default=60.0, help="sector opening, degrees")
    p.add_argument("--beam", type=float, default=90.0, help="antenna beamwidth, degrees")
    p.add_argument("--alpha", type=float, default=4.0, help="path-loss exponent")
    p.add_argument("--receiver-angles", type=float, nargs="+", default=None, help="degrees from boresight")
    p.add_argument("--report", default=None, help="write the spatial diagnostics report here (default: stdout)")

    p = sub.add_parser("train", help="train relay gains and biases by backpropagation")
    p.add_argument("network")
    _common(p, "params file to write")
    p.add_argument("--history", default=None, help="per-step loss CSV")
    p.add_argument("--loss", action="append", default=None, metavar="userN=KIND",
                   help="loss per receiver: bpsk, pam or none (default user1=bpsk user2=pam)")
    _noise_flags(p)
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--batch", type=int, default=512)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--init", choices=("paper", "normalized", "linear-baseline"), default="normalized")
    p.add_argument("--validate-every", type=int, default=0,
                   help="keep the iterate with the lowest validation BER, checked every N steps (0: keep the last)")
    p.add_argument("--validate-batch", type=int, default=50_000)
    p.add_argument("--input-scaled", action="store_true",
                   help="divide each relay's gain step by its measured input power (deep spatial networks)")
    p.add_argument("--pmax", type=float, default=0.64, help="power limit for --init linear-baseline")
    p.add_argument("--restarts", type=int, default=8, help="solver restarts for --init linear-baseline")

    p = sub.add_parser("optimize-linear", help="max-min weighted SNR gains for linear relays (zero biases)")
    p.add_argument("network")
    _common(p, "params file to write")
    _noise_flags(p)
    p.add_argument("--pmax", type=float, default=0.64)
    p.add_argument("--zeta", type=float, nargs="+", default=None, help="SNR weight per receiver (default all 1)")
    p.add_argument("--balance", action="store_true",
                   help="re-weight receivers until their predicted BERs agree (ignores --zeta)")
    p.add_argument("--detector", action="append", default=None, metavar="userN=KIND",
                   help="detectors for --balance (default user1=bpsk user2=pam)")
    p.add_argument("--restarts", type=int, default=8)
    p.add_argument("--max-iter", type=int, default=400)
    p.add_argument("--trace", default=None, help="solver trace CSV")

    p = sub.add_parser("evaluate", help="Monte-Carlo BER over a noise grid")
    p.add_argument("network")
    p.add_argument("params")
    _common(p, "BER CSV to write")
    p.add_argument("--grid", default="0:30:2", help="1/sigma^2 in dB: start:stop:step or a comma list")
    p.add_argument("--detector", action="append", default=None, metavar="userN=KIND",
                   help="bpsk, pam or nearest per receiver (default user1=bpsk user2=pam)")
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--svg", default=None)
    p.add_argument("--linear-model", action="store_true", help="simulate identity relays instead of tanh (debugging)")

    p = sub.add_parser("transfer", help="noiseless receiver output as a function of the transmitted symbol")
    p.add_argument("network")
    p.add_argument("params")
    _common(p, "transfer CSV to write")
    p.add_argument("--points", type=int, default=201)
    p.add_argument("--markers", default=None, help="CSV of the constellation points and their target bits")
    p.add_argument("--svg", default=None)
    return parser


def _config_path(argv):
    for k, tok in enumerate(argv):
        if tok == "--config" and k + 1 < len(argv):
            return argv[k + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _apply_config(parser, argv):
    """Parse ``argv`` with defaults taken from the ``--config`` file, if any."""
    from .formats import read_config

    argv = list(sys.argv[1:] if argv is None else argv)
    path = _config_path(argv)
    commands = parser._subparsers._group_actions[0].choices
    command = next((tok for tok in argv if tok in commands), None)
    if path is None or command is None:
        return parser.parse_args(argv)
    sub = commands[command]
    actions = {a.dest: a for a in sub._actions if a.option_strings}
    defaults = {}
    for key, tokens in read_config(path).items():
        if key in ("config", "help") or key not in actions:
            raise UsageError(f"{path}: unknown option {key!r} for {command}")
        act = actions[key]
        conv = act.type or str
        try:
            if isinstance(act, argparse._StoreTrueAction):
                defaults[key] = tokens[0].lower() in ("1", "true", "yes")
            elif isinstance(act, argparse._AppendAction) or act.nargs in ("+", "*"):
                defaults[key] = [conv(t) for t in tokens]
            else:
                defaults[key] = conv(" ".join(tokens))
        except ValueError:
            raise UsageError(f"{path}: bad value for {key!r}") from None
        if act.choices is not None and defaults[key] not in act.choices:
            raise UsageError(f"{path}: {key} must be one of {sorted(act.choices)}")
        act.required = False
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def cmd_generate(args):
    from .formats import save_network
    from .topology import PRESETS, SpatialConfig, generate_spatial

    if args.spatial:
        cfg = SpatialConfig(n_relays=args.relays, cell_radius=args.radius, sector_deg=args.sector, alpha=args.alpha,
                            beam_deg=args.beam, n_receivers=args.receivers,
                            receiver_angles_deg=args.receiver_angles, seed=args.seed)
        sp = generate_spatial(cfg)
        save_network(sp.network, args.out, spatial=sp)
        if args.report:
            with open(args.report, "w") as f:
                f.write(sp.diagnostics())
        else:
            sys.stdout.write(sp.diagnostics())
    elif args.preset:
        save_network(PRESETS[args.preset](), args.out)
    else:
        raise UsageError("generate needs --preset or --spatial")


def cmd_train(args):
    from .formats import load_network, save_params
    from .linear import LinearOptConfig
    from .modem import ModulationScheme
    from .trainer import TrainConfig, train

    net = load_network(args.network)
    losses = _per_user(_user_map(args.loss, ("bpsk", "pam", "none"), "loss"), net.M, ("bpsk", "pam"))
    losses = tuple(None if kind == "none" else kind for kind in losses)
    sigma2 = _sigma2(args)
    try:
        cfg = TrainConfig(batch_size=args.batch, eta=args.eta, steps=args.steps, losses=losses, init_mode=args.init,
                          sigma2=sigma2, seed=args.seed, validate_every=args.validate_every,
                          validate_batch=args.validate_batch, input_scaled=args.input_scaled)
        lin = LinearOptConfig(p_max=args.pmax, restarts=args.restarts, seed=args.seed)
    except ValueError as e:
        raise UsageError(str(e)) from None
    params, history = train(net, ModulationScheme(n_users=net.M), cfg, linear_cfg=lin)
    save_params(params, args.out, polarity=history.polarity)
    if args.history:
        history.to_csv(args.history)
    msg = f"final loss {history.loss[-1]:.6g}"
    if history.best_step is not None:
        msg += f"; kept step {history.best_step} (validation BER {min(v for _, v in history.validation):.3g})"
    print(msg)


def cmd_optimize_linear(args):
    from .formats import load_network, save_params
    from .linear import LinearOptConfig, optimize_balanced, optimize_linear
    from .modem import ModulationScheme
    from .network import RelayParams

    net = load_network(args.network)
    scheme = ModulationScheme(n_users=net.M)
    sigma2 = _sigma2(args)
    try:
        cfg = LinearOptConfig(p_max=args.pmax, zeta=args.zeta, restarts=args.restarts, max_iter=args.max_iter,
                              seed=args.seed)
    except ValueError as e:
        raise UsageError(str(e)) from None
    if args.zeta is not None and len(args.zeta) != net.M:
        raise UsageError(f"need {net.M} --zeta values")
    if args.balance:
        detectors = _per_user(_user_map(args.detector, ("bpsk", "pam", "nearest"), "detector"), net.M,
                              ("bpsk", "pam"))
        result = optimize_balanced(net, cfg, sigma2, scheme, detectors)
    else:
        result = optimize_linear(net, cfg, sigma2, scheme.symbol_power)
    save_params(RelayParams.from_flat(net, result.w, np.zeros(net.N)), args.out, polarity=result.polarity())
    if args.trace:
        result.trace_to_csv(args.trace)
    a = result.analysis
    print(f"objective (min weighted SNR) {result.objective:.6g}")
    for m in range(net.M):
        print(f"user{m + 1} gain {a.gain[m]:.6g} noise_var {a.noise_var[m]:.6g} snr {a.snr[m]:.6g}")
    print(f"relay power max {a.relay_power.max():.12g} (limit {args.pmax})")
    for n, pw in enumerate(a.relay_power):
        print(f"relay {n + 1} power {pw:.12g}")
    if result.warning:
        print(f"warning: {result.warning}", file=sys.stderr)


def cmd_evaluate(args):
    from .experiments import evaluate
    from .formats import load_network, load_params
    from .modem import ModulationScheme

    net = load_network(args.network)
    params, polarity = load_params(args.params)
    params.check(net)
    grid = parse_grid(args.grid)
    detectors = _per_user(_user_map(args.detector, ("bpsk", "pam", "nearest"), "detector"), net.M, ("bpsk", "pam"))
    if args.trials < 1:
        raise UsageError("trials must be positive")
    curve = evaluate(net, params, polarity, ModulationScheme(n_users=net.M), detectors, grid, args.trials, args.seed,
                     linear=args.linear_model)
    curve.to_csv(args.out)
    floor = 10.0 / args.trials
    low = [f"{x:g}" for x, e in zip(curve.inv_sigma2_db, curve.worst) if e < floor]
    if low:
        print(f"warning: BER below 10/trials = {floor:.3g} at {', '.join(low)} dB is not resolved; raise --trials",
              file=sys.stderr)
    if args.svg:
        from .plotting import ber_svg

        curves = {f"user {m + 1}": (curve.inv_sigma2_db, curve.ber[:, m]) for m in range(curve.ber.shape[1])}
        curves["worst"] = (curve.inv_sigma2_db, curve.worst)
        ber_svg(args.svg, curves, floor=floor)


def cmd_transfer(args):
    from .experiments import transfer_curve
    from .formats import load_network, load_params
    from .modem import ModulationScheme

    net = load_network(args.network)
    params, polarity = load_params(args.params)
    params.check(net)
    if args.points < 2:
        raise UsageError("need at least 2 points")
    curve = transfer_curve(net, params, ModulationScheme(n_users=net.M), args.points, polarity)
    curve.to_csv(args.out, args.markers)
    if args.svg:
        from .plotting import transfer_svg

        transfer_svg(args.svg, curve.s, curve.rt, curve.marker_s, curve.marker_rt, curve.marker_bits)


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "optimize-linear": cmd_optimize_linear,
            "evaluate": cmd_evaluate, "transfer": cmd_transfer}


def main(argv=None) -> int:
    from .formats import FormatError
    from .network import DimensionError, NonFiniteSignalError
    from .trainer import TrainingDiverged

    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        COMMANDS[args.command](args)
    except SystemExit as e:  # argparse
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    except UsageError as e:
        print(f"deeprelay: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, DimensionError, OSError) as e:
        print(f"deeprelay: error: {e}", file=sys.stderr)
        return EXIT_IO
    except (TrainingDiverged, NonFiniteSignalError, FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"deeprelay: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"deeprelay: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
