"""Command-line front end: detection reports and simulation reproduction.

Two subcommands:

``hdcp detect``    reads a delimited matrix (rows = time points), picks or
                   accepts a dependence order, runs the global test and
                   binary segmentation, and writes a JSON report plus
                   optional flat plot-data files.

``hdcp simulate``  runs a declarative experiment config (size/power,
                   multiple change points, boundary detection curves, or
                   elbow curves) and writes the results table.

Exit codes: 0 ran to completion (whatever the test decided), 1 usage
error, 2 data error, 3 numerical failure. Reports are self-describing and
byte-identical across repeated runs with the same inputs, seed, and any
worker count (HDCP_WORKERS).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .core import (
    DependenceWindow,
    DimensionTooSmall,
    EmptySumRange,
    HdcpError,
    IndexOutOfRange,
    NonFiniteEntry,
    NonPositiveBaseline,
    SeriesMatrix,
    SingularDesign,
    validate_input,
)
from .inference import InferenceConfig, binary_segmentation, test_global
from .selector import default_h_max, lag_energy_curve, select_m
from .simulator import (
    BoundaryDesign,
    ElbowDesign,
    MultiCpDesign,
    SizePowerDesign,
    run_boundary_curve,
    run_elbow_curve,
    run_multi_cp,
    run_size_power,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage problems; this tool reserves 2 for
    # data errors, so route usage failures through UsageError instead.
    def error(self, message):
        raise UsageError(message)


def _detect_delimiter(line: str) -> Optional[str]:
    counts = {d: line.count(d) for d in (",", "\t", ";")}
    best = max(counts, key=counts.get)
    return best if counts[best] > 0 else None


def _is_header(tokens: list[str]) -> bool:
    for tok in tokens:
        try:
            float(tok)
        except ValueError:
            return True
    return False


def load_matrix(path: str, delimiter: Optional[str] = None) -> np.ndarray:
    """Parse a delimited text matrix, one time point per row.

    The delimiter is auto-detected among comma, tab, and semicolon (falling
    back to whitespace) unless overridden, and a single non-numeric header
    row is skipped. Parse failures report the offending row and column.
    """
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise DataError(f"{path}: file contains no data rows")
    delim = delimiter if delimiter is not None else _detect_delimiter(lines[0])

    def split(line: str) -> list[str]:
        return [t for t in (line.split(delim) if delim else line.split())]

    start = 1 if _is_header([t.strip() for t in split(lines[0])]) else 0
    rows = []
    width = None
    for i, line in enumerate(lines[start:], start=start + 1):
        tokens = [t.strip() for t in split(line)]
        if width is None:
            width = len(tokens)
        elif len(tokens) != width:
            raise DataError(
                f"{path}: row {i} has {len(tokens)} columns, expected {width}"
            )
        vals = []
        for j, tok in enumerate(tokens, start=1):
            try:
                vals.append(float(tok))
            except ValueError:
                raise DataError(
                    f"{path}: cannot parse value {tok!r} at row {i}, column {j}"
                ) from None
        rows.append(vals)
    return np.asarray(rows, dtype=np.float64)


def _json_dump(obj, path: Optional[str]) -> str:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path:
        Path(path).write_text(text)
    return text


def _write_plot_data(path: Path, header: tuple[str, str], cols) -> None:
    lines = ["\t".join(header)]
    for a, b in cols:
        lines.append(f"{a}\t{float(b)!r}")
    path.write_text("\n".join(lines) + "\n")


def cmd_detect(args) -> int:
    raw = Path(args.input).read_bytes()
    digest = hashlib.sha256(raw).hexdigest()
    matrix = load_matrix(args.input, args.delimiter)
    series = SeriesMatrix(matrix)

    warnings: list[str] = []
    elbow_report = None
    if args.m == "auto":
        h_max = args.h_max if args.h_max is not None else default_h_max(series.n)
        curve = lag_energy_curve(series, h_max)
        chosen = select_m(curve, args.drop_ratio)
        m_used = chosen.value
        if chosen.saturated:
            warnings.append(
                f"elbow saturated: no collapse up to h_max={h_max}; using M={m_used}"
            )
        elbow_report = {
            "h": list(range(h_max + 1)),
            "w_hat": [float(v) for v in curve.w_hat],
            "selected_m": m_used,
            "saturated": chosen.saturated,
            "drop_ratio": args.drop_ratio,
        }
    else:
        try:
            m_used = int(args.m)
        except ValueError:
            raise UsageError(f"--m must be an integer or 'auto', got {args.m!r}") from None
        if m_used < 0:
            raise UsageError("--m must be nonnegative")

    window = DependenceWindow(m_used)
    validate_input(series, window)
    cfg = InferenceConfig(
        alpha=args.alpha,
        fwer_mode=args.fwer,
        min_segment_len=args.min_seg,
    )

    from .engine import compute_gram, l_trace

    gram = compute_gram(series)
    curve_l = l_trace(gram, window)
    outcome = test_global(series, window, cfg)
    if outcome.degenerate:
        warnings.append("global test variance degenerate; decision forced to non-rejection")
    result = binary_segmentation(series, window, cfg)
    if any(rec.status == "degenerate" for rec in result.trace):
        warnings.append("one or more segments had degenerate variance")
    if any(rec.status == "skipped_infeasible" for rec in result.trace):
        warnings.append("one or more segments were too short for variance estimation")

    report = {
        "tool": {"name": "hdcp", "version": __version__, "command": "detect"},
        "input": {"path": args.input, "sha256": digest, "n": series.n, "p": series.p},
        "settings": {
            "m_mode": "auto" if args.m == "auto" else "fixed",
            "m_used": m_used,
            "alpha": args.alpha,
            "fwer_mode": args.fwer,
            "alpha_seg": cfg.segment_alpha(series.n),
            "min_segment_len": cfg.segment_min_length(window),
            "drop_ratio": args.drop_ratio,
            "seed": args.seed,
            "delimiter": args.delimiter,
        },
        "elbow": elbow_report,
        "global_test": outcome.to_dict(),
        "change_points": list(result.points),
        "segments": [rec.to_dict() for rec in result.trace],
        "l_trace": [float(v) for v in curve_l],
        "warnings": warnings,
    }
    text = _json_dump(report, args.output)
    if args.output:
        print(f"report written to {args.output}")
    else:
        sys.stdout.write(text)

    if args.trace:
        base = Path(args.output) if args.output else Path("hdcp_report.json")
        lt = base.with_suffix(".ltrace.tsv")
        _write_plot_data(lt, ("t", "l_trace"), list(enumerate(curve_l, start=1)))
        if elbow_report is not None:
            el = base.with_suffix(".elbow.tsv")
            _write_plot_data(
                el, ("h", "w_hat"), list(zip(elbow_report["h"], elbow_report["w_hat"]))
            )
    return EXIT_OK


_BOOL_VALUES = {"true": True, "false": False, "1": True, "0": False,
                "yes": True, "no": False}


def parse_config(path: str) -> dict:
    """Read a flat declarative config: one 'key = value' per line.

    Comments start with '#'. Values may be scalars or comma-separated
    lists; types are resolved by the design schema.
    """
    out: dict[str, str] = {}
    for i, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise DataError(f"{path}: line {i}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        key = key.strip().lower()
        if key in out:
            raise DataError(f"{path}: line {i}: duplicate key {key!r}")
        out[key] = value.strip()
    if "design" not in out:
        raise DataError(f"{path}: missing required key 'design'")
    return out


_REQUIRED = object()


def _take(cfg: dict, key: str, conv, default=_REQUIRED):
    if key in cfg:
        raw = cfg.pop(key)
        try:
            return conv(raw)
        except (TypeError, ValueError) as exc:
            raise DataError(f"config key {key!r}: {exc}") from None
    if default is _REQUIRED:
        raise DataError(f"config is missing required key {key!r}")
    return default


def _as_bool(raw: str) -> bool:
    try:
        return _BOOL_VALUES[raw.lower()]
    except KeyError:
        raise ValueError(f"expected a boolean, got {raw!r}") from None


def _int_list(raw: str) -> tuple[int, ...]:
    return tuple(int(v.strip()) for v in raw.split(",") if v.strip())


def _float_list(raw: str) -> tuple[float, ...]:
    return tuple(float(v.strip()) for v in raw.split(",") if v.strip())


def _common(cfg: dict) -> dict:
    return {
        "n": _take(cfg, "n", int),
        "p": _take(cfg, "p", int),
        "reps": _take(cfg, "reps", int),
        "seed": _take(cfg, "seed", int, 0),
        "innovation": _take(cfg, "innovation", str, "gaussian"),
        "t_dof": _take(cfg, "t_dof", float, 8.0),
        "rho": _take(cfg, "rho", float, 0.6),
        "perturb_sparsity": _take(cfg, "perturb_sparsity", float, 0.05),
        "perturb_scale": _take(cfg, "perturb_scale", float, 0.05),
    }


def build_design(cfg: dict):
    cfg = dict(cfg)
    name = cfg.pop("design").lower()
    try:
        if name == "size_power":
            design = SizePowerDesign(
                **_common(cfg),
                m_true=_take(cfg, "m_true", int),
                m_used=_take(cfg, "m_used", int),
                alpha=_take(cfg, "alpha", float, 0.05),
                delta=_take(cfg, "delta", float, 0.0),
                tau=_take(cfg, "tau", int, None),
            )
        elif name == "multi_cp":
            design = MultiCpDesign(
                **_common(cfg),
                m_true=_take(cfg, "m_true", int),
                m_used=_take(cfg, "m_used", int),
                change_points=_take(cfg, "change_points", _int_list, ()),
                deltas=_take(cfg, "deltas", _float_list, (0.0,)),
                alpha=_take(cfg, "alpha", float, 0.05),
                fwer_mode=_take(cfg, "fwer", _as_bool, False),
                tolerance_pts=_take(cfg, "tolerance_pts", int, 0),
                min_segment_len=_take(cfg, "min_seg", int, None),
            )
        elif name == "boundary_curve":
            design = BoundaryDesign(
                **_common(cfg),
                m_true=_take(cfg, "m_true", int),
                m_used=_take(cfg, "m_used", int),
                tau=_take(cfg, "tau", int),
                deltas=_take(cfg, "deltas", _float_list),
            )
        elif name == "elbow_curve":
            change_points = _take(cfg, "change_points", _int_list, ())
            deltas = _take(
                cfg, "deltas", _float_list, (0.0,) * (len(change_points) + 1)
            )
            design = ElbowDesign(
                **_common(cfg),
                m_true_values=_take(cfg, "m_true", _int_list),
                h_max=_take(cfg, "h_max", int),
                drop_ratio=_take(cfg, "drop_ratio", float, 0.02),
                change_points=change_points,
                deltas=deltas,
            )
        else:
            raise DataError(f"unknown design {name!r}")
    except (TypeError, ValueError) as exc:
        raise DataError(f"invalid config: {exc}") from None
    if cfg:
        raise DataError(f"unknown config keys: {sorted(cfg)}")
    return name, design


_RUNNERS = {
    "size_power": run_size_power,
    "multi_cp": run_multi_cp,
    "boundary_curve": run_boundary_curve,
    "elbow_curve": run_elbow_curve,
}


def _summary_lines(name: str, result) -> list[str]:
    if name == "size_power":
        return [
            f"rejection rate {result.rejection_rate:.4f} "
            f"(se {result.std_error:.4f}, reps {result.design.reps})"
        ]
    if name == "multi_cp":
        return [
            f"FP {result.fp_mean:.3f} (sd {result.fp_sd:.3f})",
            f"FN {result.fn_mean:.3f} (sd {result.fn_sd:.3f})",
            f"TP {result.tp_mean:.3f} (sd {result.tp_sd:.3f})",
        ]
    if name == "boundary_curve":
        return [
            f"delta {d:g}: detection {pr:.3f} (se {se:.3f})"
            for d, pr, se in zip(
                result.design.deltas, result.probabilities, result.std_errors
            )
        ]
    return [
        f"m_true {m}: recovery {frac:.2f}"
        for m, frac in zip(result.design.m_true_values, result.recovery_fractions)
    ]


def cmd_simulate(args) -> int:
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg["seed"] = str(args.seed)
    name, design = build_design(cfg)
    result = _RUNNERS[name](design)
    report = {
        "tool": {"name": "hdcp", "version": __version__, "command": "simulate"},
        "design_name": name,
        "master_seed": design.seed,
        "results": result.to_dict(),
    }
    text = _json_dump(report, args.output)
    if args.output:
        print(f"design {name}, master seed {design.seed}")
        for line in _summary_lines(name, result):
            print("  " + line)
        print(f"results written to {args.output}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hdcp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"hdcp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    det = sub.add_parser("detect", help="detect mean change points in a matrix file")
    det.add_argument("--input", required=True, help="delimited matrix, rows = time points")
    det.add_argument("--m", default="auto",
                     help="dependence order: integer, or 'auto' for the elbow rule")
    det.add_argument("--alpha", type=float, default=0.05, help="test level")
    det.add_argument("--fwer", action="store_true",
                     help="per-segment level 1/(n log n) for family-wise error control")
    det.add_argument("--min-seg", type=int, default=None, help="minimum segment length")
    det.add_argument("--drop-ratio", type=float, default=0.02,
                     help="elbow collapse threshold relative to lag-zero energy")
    det.add_argument("--h-max", type=int, default=None, help="largest lag probed by the elbow")
    det.add_argument("--seed", type=int, default=0, help="echoed into the report")
    det.add_argument("--output", default=None, help="report path (default: stdout)")
    det.add_argument("--trace", action="store_true",
                     help="also write flat plot data (t/l_trace, h/w_hat)")
    det.add_argument("--delimiter", default=None, help="override delimiter detection")
    det.set_defaults(func=cmd_detect)

    sim = sub.add_parser("simulate", help="run a declarative experiment config")
    sim.add_argument("--config", required=True, help="flat key = value design file")
    sim.add_argument("--seed", type=int, default=None, help="override the config master seed")
    sim.add_argument("--output", default=None, help="results path (default: stdout)")
    sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DataError, DimensionTooSmall, NonFiniteEntry, IndexOutOfRange,
            EmptySumRange, NonPositiveBaseline) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SingularDesign as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
