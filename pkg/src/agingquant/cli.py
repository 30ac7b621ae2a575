"""Command-line front end: every experiment writes CSV/JSON plus a manifest.

Exit codes: 0 success, 2 parameter error, 3 infeasible selection, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import report
from .aging import CANONICAL_LEVELS_MV, DelayModel, annotate, delay_scale
from .errors import ModelError, ParameterError, SelectionError
from .netlist import build_mac, build_multiplier
from .nn import FLIP_TARGETS, Model, evaluate_accuracy, infer_quantized, inject_errors, make_dataset, quantize_model, train
from .quant import QuantMethod
from .selector import feasible_set, pipeline, select_compression, validate_surrogate
from .sta import SWEEP_COLUMNS, CompressionConfig, Padding, analyze, delay_sweep
from .timing_sim import SimConfig, error_metrics, toggle_energy

log = logging.getLogger("agingquant")

EXIT_OK, EXIT_PARAM, EXIT_INFEASIBLE, EXIT_IO = 0, 2, 3, 4
DEFAULT_P_GRID = "0,1e-5,1e-4,5e-4,1e-3,1e-2"


class Infeasible(Exception):
    """Some level has an empty feasible set; outputs were still written."""

    def __init__(self, message: str, outputs: list[Path]):
        super().__init__(message)
        self.outputs = outputs


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _shared() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("shared")
    g.add_argument("--seed", type=int, default=0, help="seed for data, training and stimulus")
    g.add_argument("--vectors", type=int, default=100_000, help="vector pairs per timing simulation")
    g.add_argument("--vdd", type=float, default=0.50)
    g.add_argument("--vth0", type=float, default=0.23)
    g.add_argument("--levels", type=_floats, default=list(map(float, CANONICAL_LEVELS_MV)),
                   help="aging levels in mV, comma separated")
    g.add_argument("--dvth", type=lambda v: [float(v)], dest="levels", default=argparse.SUPPRESS,
                   help="single aging level in mV (shorthand for --levels)")
    g.add_argument("--out", type=Path, default=Path("out"))
    g.add_argument("--format", choices=("csv", "json"), default="csv")
    g.add_argument("--guardband-pct", type=float, default=0.0,
                   help="timing guardband as a percentage of the fresh critical path")
    g.add_argument("--delay", action="append", default=[], metavar="KIND=VALUE",
                   help="override a base gate delay, e.g. XOR2=2.0")
    g.add_argument("--config", type=Path, help="JSON file of flag defaults")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def _nn_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("model")
    g.add_argument("--model", type=Path, help="load a trained model JSON instead of training")
    g.add_argument("--hidden", type=_ints, default=[32, 32], help="hidden layer widths")
    g.add_argument("--epochs", type=int, default=40)
    g.add_argument("--lr", type=float, default=0.05)
    g.add_argument("--separation", type=float, default=1.0)
    g.add_argument("--samples", type=int, default=4000)
    return p


def build_parser() -> argparse.ArgumentParser:
    shared, nn = _shared(), _nn_flags()
    parser = argparse.ArgumentParser(prog="agingquant", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("characterize", parents=[shared], help="STA delay sweep over compression and aging")

    p = sub.add_parser("age-errors", parents=[shared], help="timing errors of the unguarded aged circuit")
    p.add_argument("--circuit", choices=("mult", "mac"), default="mult")

    p = sub.add_parser("inject", parents=[shared, nn], help="accuracy under product-MSB flips")
    p.add_argument("--p-grid", type=_floats, default=_floats(DEFAULT_P_GRID))
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--target", choices=FLIP_TARGETS, default="product",
                   help="flip the top two bits of each product or of each MAC output")
    p.add_argument("--method", type=QuantMethod, default=QuantMethod.M2)
    p.add_argument("--alpha", type=int, default=0)
    p.add_argument("--beta", type=int, default=0)

    p = sub.add_parser("select", parents=[shared, nn], help="aging-aware selection per level")
    p.add_argument("--threshold", type=float, help="accepted accuracy loss (fraction); default: best method")

    p = sub.add_parser("energy", parents=[shared, nn], help="toggle-count energy of the selected configurations")
    p.add_argument("--trace-driven", action="store_true", help="drive the MAC with recorded NN operands")
    p.add_argument("--trace-samples", type=int, default=64)

    p = sub.add_parser("validate-surrogate", parents=[shared, nn], help="rank correlation of norm vs. loss")
    p.add_argument("--grid-max", type=int, default=4)

    sub.add_parser("train", parents=[shared, nn], help="train the toy model")

    p = sub.add_parser("quantize", parents=[shared, nn], help="quantize the toy model")
    p.add_argument("--method", type=QuantMethod, default=QuantMethod.M2)
    p.add_argument("--alpha", type=int, default=0)
    p.add_argument("--beta", type=int, default=0)
    p.add_argument("--padding", type=Padding, default=Padding.MSB)
    p.add_argument("--per-channel", action="store_true")
    p.add_argument("--trace-samples", type=int, default=0, help="also record a MAC operand trace")

    p = sub.add_parser("rerun", help="re-execute a run from its manifest")
    p.add_argument("manifest", type=Path)
    p.add_argument("--out", type=Path, help="write to this directory instead")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


# -- helpers --------------------------------------------------------------------------


def _delay_model(args) -> DelayModel:
    model = DelayModel(args.vdd, args.vth0)
    overrides = {}
    for item in args.delay:
        kind, _, value = item.partition("=")
        try:
            overrides[kind.strip().upper()] = float(value)
        except ValueError:
            raise ParameterError(f"bad --delay {item!r}; expected KIND=VALUE") from None
    try:
        return model.with_overrides(**overrides) if overrides else model
    except ValueError as exc:
        raise ParameterError(str(exc)) from None


def _deadline(d_fresh: float, args) -> float:
    return d_fresh * (1.0 + args.guardband_pct / 100.0)


def _dataset(args):
    return make_dataset(args.seed, n_samples=args.samples, separation=args.separation)


def _model(args, ds) -> Model:
    if args.model:
        return Model.from_dict(json.loads(Path(args.model).read_text()))
    sizes = [ds.x.shape[1], *args.hidden, ds.n_classes]
    return train(ds, sizes, epochs=args.epochs, lr=args.lr, seed=args.seed)


def _check_levels(args, model: DelayModel) -> None:
    for lv in args.levels:
        delay_scale(model, lv)


# -- commands --------------------------------------------------------------------------


def cmd_characterize(args) -> list[Path]:
    mac, dm = build_mac(), _delay_model(args)
    rows = delay_sweep(mac, dm, args.levels)
    out = [report.write_table(args.out / "delay_sweep.csv", SWEEP_COLUMNS, (
        (r.dvth_mv, r.alpha, r.beta, r.padding, r.delay, r.normalized_delay) for r in rows), args.format)]
    d_fresh = analyze(mac, annotate(mac, dm, 0.0)).delay
    deadline = _deadline(d_fresh, args)
    summary = []
    for lv in args.levels:
        base = analyze(mac, annotate(mac, dm, lv)).delay / d_fresh
        feas = feasible_set(mac, dm, lv, deadline)
        if feas:
            c = select_compression(feas)
            summary.append((lv, base, c.alpha, c.beta, c.padding, c.delay / d_fresh))
        else:
            summary.append((lv, base, None, None, None, None))
    out.append(report.write_table(args.out / "normalized_delay.csv",
                                  ("dvth_mv", "baseline_norm_delay", "alpha", "beta", "padding", "selected_norm_delay"),
                                  summary, args.format))
    return out


def cmd_age_errors(args) -> list[Path]:
    circuit = build_multiplier(8) if args.circuit == "mult" else build_mac()
    dm = _delay_model(args)
    fresh = annotate(circuit, dm, 0.0)
    d_fresh = analyze(circuit, fresh).delay
    deadline = _deadline(d_fresh, args)
    cfg = SimConfig(deadline, args.vectors, args.seed)
    baseline = None
    rows = []
    for lv in args.levels:
        res = error_metrics(circuit, annotate(circuit, dm, lv), cfg)
        baseline = baseline or error_metrics(circuit, fresh, cfg).mean_toggles
        rows.append((lv, 0, 0, Padding.MSB, deadline, res.med, res.msb_flip_prob, res.error_rate,
                     res.mean_toggles / baseline if baseline else 0.0))
        log.info("%g mV: MED=%.4g flip=%.4g", lv, res.med, res.msb_flip_prob)
    return [report.write_table(args.out / "age_errors.csv", report.SIM_COLUMNS, rows, args.format)]


def cmd_inject(args) -> list[Path]:
    ds = _dataset(args)
    model = _model(args, ds)
    qm = quantize_model(model, args.method, args.alpha, args.beta, ds.x_train[:500])
    rows = []
    for p in args.p_grid:
        r = inject_errors(qm, ds.x_test, ds.y_test, p, trials=args.trials, seed=args.seed, target=args.target)
        rows.append((p, r.mean, r.median, min(r.trials), max(r.trials)))
    return [report.write_table(args.out / "inject.csv",
                               ("p", "mean_accuracy", "median_accuracy", "min_accuracy", "max_accuracy"),
                               rows, args.format)]


def _selection(args):
    ds = _dataset(args)
    model = _model(args, ds)
    mac, dm = build_mac(), _delay_model(args)
    d_fresh = analyze(mac, annotate(mac, dm, 0.0)).delay
    guardband = _deadline(d_fresh, args) - d_fresh
    results = pipeline(mac, dm, model, ds, args.levels, threshold=getattr(args, "threshold", None),
                       guardband=guardband, verify_vectors=args.vectors, seed=args.seed)
    return ds, model, results


def cmd_select(args) -> list[Path]:
    _, _, results = _selection(args)
    rows, bundle = [], []
    for r in results:
        q = r.quant
        rows.append((r.dvth_mv, r.alpha, r.beta, r.padding, r.method, q.accuracy if q else None,
                     q.accuracy_loss if q else None, r.norm_delay, r.norm_energy, r.timing_errors, r.verify_vectors))
        bundle.append({
            "level": r.dvth_mv,
            "feasible": [[f.alpha, f.beta, f.padding.value] for f in r.feasible],
            "selected": None if r.infeasible else [r.alpha, r.beta, r.padding.value],
            "methods": [[m.method.value, m.accuracy, m.accuracy_loss] for m in q.table] if q else [],
            "threshold_met": q.threshold_met if q else None,
            "verdict": None if r.timing_errors is None else f"{r.timing_errors} errors / {r.verify_vectors} vectors",
            "qmodel": q.qmodel.to_dict() if q else None,
        })
        if not r.infeasible:
            log.info("%g mV: %s method=%s loss=%.4f errors=%s", r.dvth_mv,
                     CompressionConfig(r.alpha, r.beta, r.padding).label(), r.method and r.method.value,
                     q.accuracy_loss if q else float("nan"), r.timing_errors)
    out = [report.write_table(args.out / "selection.csv", report.SELECTION_COLUMNS, rows, args.format)]
    path = args.out / "selection_bundle.json"
    path.write_text(json.dumps(bundle) + "\n")
    out.append(path)
    if any(r.infeasible for r in results):
        raise Infeasible(", ".join(f"{r.dvth_mv:g} mV" for r in results if r.infeasible), out)
    return out


def cmd_energy(args) -> list[Path]:
    ds = _dataset(args)
    model = _model(args, ds)
    mac, dm = build_mac(), _delay_model(args)
    fresh = annotate(mac, dm, 0.0)
    d_fresh = analyze(mac, fresh).delay
    deadline = _deadline(d_fresh, args)
    cal = ds.x_train[:500]
    x_trace = ds.x_test[:args.trace_samples]

    def stimulus(alpha, beta, padding):
        if not args.trace_driven:
            return None
        qm = quantize_model(model, QuantMethod.M2, alpha, beta, cal, padding=padding)
        return infer_quantized(qm, x_trace, record_trace=len(x_trace)).trace.as_ports()

    base_cfg = SimConfig(deadline, args.vectors, args.seed, trace=stimulus(0, 0, Padding.MSB))
    baseline = toggle_energy(mac, fresh, base_cfg)
    rows = []
    for lv in args.levels:
        feas = feasible_set(mac, dm, lv, deadline)
        if not feas:
            rows.append((lv, None, None, None, deadline, None, None, None, None))
            continue
        c = select_compression(feas)
        comp = CompressionConfig(c.alpha, c.beta, c.padding)
        cfg = SimConfig(deadline, args.vectors, args.seed, compression=comp,
                        trace=stimulus(c.alpha, c.beta, c.padding) if c.alpha < 8 and c.beta < 8 else None)
        res = error_metrics(mac, annotate(mac, dm, lv), cfg)
        rows.append((lv, c.alpha, c.beta, c.padding, deadline, res.med, res.msb_flip_prob, res.error_rate,
                     res.mean_toggles / baseline))
    return [report.write_table(args.out / "energy.csv", report.SIM_COLUMNS, rows, args.format)]


def cmd_validate_surrogate(args) -> list[Path]:
    ds = _dataset(args)
    model = _model(args, ds)
    coeffs = validate_surrogate(model, ds, grid=range(args.grid_max + 1))
    rows = [(m, "undefined" if c is None else c) for m, c in coeffs.items()]
    return [report.write_table(args.out / "surrogate.csv", ("method", "pearson"), rows, args.format)]


def cmd_train(args) -> list[Path]:
    ds = _dataset(args)
    model = _model(args, ds)
    path = args.out / "model.json"
    path.write_text(json.dumps(model.to_dict()) + "\n")
    acc = evaluate_accuracy(model, ds.x_test, ds.y_test)
    log.info("FP32 test accuracy %.4f", acc)
    return [path, report.write_table(args.out / "train.csv", ("epoch", "train_loss"),
                                     enumerate(model.loss_history, 1), args.format)]


def cmd_quantize(args) -> list[Path]:
    ds = _dataset(args)
    model = _model(args, ds)
    qm = quantize_model(model, args.method, args.alpha, args.beta, ds.x_train[:500],
                        padding=args.padding, per_channel=args.per_channel)
    path = args.out / "qmodel.json"
    path.write_text(json.dumps(qm.to_dict()) + "\n")
    out = [path]
    fp32 = evaluate_accuracy(model, ds.x_test, ds.y_test)
    res = infer_quantized(qm, ds.x_test, record_trace=args.trace_samples)
    acc = float(np.mean(res.predictions == ds.y_test))
    out.append(report.write_table(args.out / "quantize.csv",
                                  ("method", "alpha", "beta", "padding", "fp32_accuracy", "accuracy", "accuracy_loss",
                                   "bias_saturations", "overflows"),
                                  [(qm.method, qm.alpha, qm.beta, qm.padding, fp32, acc, fp32 - acc,
                                    qm.bias_saturations, res.overflows)], args.format))
    if res.trace is not None:
        tpath = args.out / "trace.bin"
        res.trace.save(tpath)
        out.append(tpath)
    return out


COMMANDS = {
    "characterize": cmd_characterize,
    "age-errors": cmd_age_errors,
    "inject": cmd_inject,
    "select": cmd_select,
    "energy": cmd_energy,
    "validate-surrogate": cmd_validate_surrogate,
    "train": cmd_train,
    "quantize": cmd_quantize,
}


def _config_dict(args) -> dict:
    skip = {"command", "verbose", "config", "manifest"}
    out = {}
    for k, v in vars(args).items():
        if k in skip:
            continue
        if isinstance(v, Path):
            v = str(v)
        elif isinstance(v, (QuantMethod, Padding)):
            v = v.value
        out[k] = v
    return out


def _namespace(command: str, config: dict) -> argparse.Namespace:
    ns = argparse.Namespace(**config)
    for k in ("out", "model", "config"):
        if getattr(ns, k, None) is not None:
            setattr(ns, k, Path(getattr(ns, k)))
    if hasattr(ns, "method"):
        ns.method = QuantMethod(ns.method)
    if hasattr(ns, "padding"):
        ns.padding = Padding(ns.padding)
    ns.command = command
    return ns


def run(command: str, args: argparse.Namespace, argv: list[str]) -> list[Path]:
    args.out.mkdir(parents=True, exist_ok=True)
    _check_levels(args, _delay_model(args))
    try:
        outputs = COMMANDS[command](args)
    except Infeasible as exc:
        report.write_manifest(args.out, command, argv, _config_dict(args), exc.outputs)
        raise
    report.write_manifest(args.out, command, argv, _config_dict(args), outputs)
    return outputs


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    cfg_path = getattr(args, "config", None)
    if not cfg_path:
        return args
    cfg = json.loads(Path(cfg_path).read_text())
    sub = parser._subparsers._group_actions[0].choices[args.command]  # noqa: SLF001
    sub.set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items()})
    args = parser.parse_args(argv)
    for k in ("levels", "hidden", "p_grid"):
        if isinstance(getattr(args, k, None), str):
            setattr(args, k, (_ints if k == "hidden" else _floats)(getattr(args, k)))
    if isinstance(args.out, str):
        args.out = Path(args.out)
    return args


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config_file(parser, argv)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "rerun":
            manifest = json.loads(Path(args.manifest).read_text())
            ns = _namespace(manifest["command"], manifest["config"])
            if args.out is not None:
                ns.out = args.out
            outputs = run(manifest["command"], ns, manifest["argv"])
        else:
            outputs = run(args.command, args, argv)
    except Infeasible as exc:
        print(f"infeasible at: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ParameterError, ModelError, SelectionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARAM
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO
    for p in outputs:
        print(p)
    return EXIT_OK
