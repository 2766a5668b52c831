"""Command-line front end: streaming detection, sweeps, diagnostics, checks.

Commands
--------
``detect``            run one detector over a newline-delimited numeric stream
``sweep``             emit operating-characteristic CSV across thresholds
``diagnose-density``  estimator-quality series (MISE / KL loss) plus fitted rates
``verify``            pass/fail report for the statistical guarantees

Options may come from a TOML config file (``--config``); explicit flags
override the file, and the merged effective config can be written back out
with ``--dump-config`` for exact reruns. The default seed comes from the
``LOOCUSUM_SEED`` environment variable when set.

Exit codes: 0 success/alarm, 10 stream ended without alarm, 2 parse or
config error, 3 output I/O error, 4 rate violation, 5 verification failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from typing import Optional, Sequence, TextIO

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .density import (
    EPANECHNIKOV,
    GAUSSIAN,
    BandwidthPolicy,
    ClampBounds,
    Kernel,
    estimate_kl_loss,
    estimate_mise,
    fit_rate_bounds,
)
from .detect import (
    PER_SEGMENT,
    PER_TIME,
    WindowPolicy,
    threshold_from_alpha,
    window_from_alpha,
)
from .errors import RateViolationError
from .model import ChangePointModel, GaussianModel, kl_divergence
from .sim import (
    CUSUM,
    DETECTOR_KINDS,
    LOO_CUSUM,
    WL_GLR,
    TrialPlan,
    compare_at_matched_mtfa,
    check_false_alarm_bound,
    estimate_delay,
    estimate_mtfa,
    run_detector_on_array,
    sweep_operating_characteristic,
)

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_IO = 3
EXIT_RATE_VIOLATION = 4
EXIT_VERIFY_FAILED = 5
EXIT_NO_ALARM = 10

SEED_ENV_VAR = "LOOCUSUM_SEED"
DEFAULT_SEED = 12345

_DEFAULTS: dict = {
    "pre_mean": 0.0,
    "pre_var": 1.0,
    "post_mean": None,
    "post_var": None,
    "detector": LOO_CUSUM,
    "detectors": list(DETECTOR_KINDS),
    "alpha": 0.01,
    "threshold": None,
    "window": None,
    "window_f": None,
    "kl_lower_bound": None,
    "windows": [20, 50, 100, 200],
    "thresholds": [2.0, 4.0, 6.0, 8.0, 10.0],
    "kernel": "gaussian",
    "scope": PER_SEGMENT,
    "fixed_h": None,
    "clamp_lower": 1e-8,
    "clamp_upper": 1e8,
    "trials": 200,
    "max_steps": 10_000,
    "sizes": [50, 100, 200, 400, 800],
    "far_trials": 400,
    "delay_trials": 2000,
    "target_mtfa": 200.0,
    "checks": ["far", "slope", "matched"],
    "debug_threshold_offset": 0.0,
    "seed": None,
    "workers": 1,
    "input": "-",
    "output": "-",
    "trace": None,
    "dump_config": None,
}

_LIST_KEYS = {"detectors", "windows", "thresholds", "sizes", "checks"}


class CliError(Exception):
    def __init__(self, message: str, code: int) -> None:
        super().__init__(message)
        self.code = code


def _fmt(value) -> str:
    """Full-precision, locale-independent scalar formatting for CSV."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def _parse_list(text: str, conv) -> list:
    return [conv(part) for part in text.split(",") if part.strip() != ""]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="loocusum",
        description="Sequential change detection and Monte Carlo benchmarking.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="TOML config file; flags override it")
        p.add_argument("--dump-config", dest="dump_config",
                       help="write the merged effective config to this path")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--output", help="output path, or - for stdout")
        p.add_argument("--pre-mean", dest="pre_mean", type=float)
        p.add_argument("--pre-var", dest="pre_var", type=float)
        p.add_argument("--post-mean", dest="post_mean", type=float)
        p.add_argument("--post-var", dest="post_var", type=float)
        p.add_argument("--kernel", choices=["gaussian", "epanechnikov"])
        p.add_argument("--scope", choices=[PER_SEGMENT, PER_TIME])
        p.add_argument("--fixed-h", dest="fixed_h", type=float)
        p.add_argument("--clamp-lower", dest="clamp_lower", type=float)
        p.add_argument("--clamp-upper", dest="clamp_upper", type=float)
        p.add_argument("--alpha", type=float)
        p.add_argument("--window", type=int)
        p.add_argument("--window-f", dest="window_f", type=float)
        p.add_argument("--kl-lower-bound", dest="kl_lower_bound", type=float)
        p.add_argument("--threshold", type=float)
        p.add_argument("--trials", type=int)
        p.add_argument("--max-steps", dest="max_steps", type=int)

    p_detect = sub.add_parser("detect", help="run a detector over a data stream")
    add_common(p_detect)
    p_detect.add_argument("--input", help="input path, or - for stdin")
    p_detect.add_argument("--detector", choices=list(DETECTOR_KINDS))
    p_detect.add_argument("--trace", help="write the statistic path CSV here")

    p_sweep = sub.add_parser("sweep", help="operating-characteristic sweep")
    add_common(p_sweep)
    p_sweep.add_argument("--detectors", type=lambda s: _parse_list(s, str))
    p_sweep.add_argument("--windows", type=lambda s: _parse_list(s, int))
    p_sweep.add_argument("--thresholds", type=lambda s: _parse_list(s, float))

    p_diag = sub.add_parser("diagnose-density", help="estimator quality series")
    add_common(p_diag)
    p_diag.add_argument("--sizes", type=lambda s: _parse_list(s, int))

    p_verify = sub.add_parser("verify", help="statistical guarantee checks")
    add_common(p_verify)
    p_verify.add_argument("--far-trials", dest="far_trials", type=int)
    p_verify.add_argument("--delay-trials", dest="delay_trials", type=int)
    p_verify.add_argument("--target-mtfa", dest="target_mtfa", type=float)
    p_verify.add_argument("--checks", type=lambda s: _parse_list(s, str))
    p_verify.add_argument("--debug-threshold-offset", dest="debug_threshold_offset",
                          type=float, help="debug: shift the FAR-check threshold")

    return parser


def _load_config_file(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}", EXIT_PARSE)
    except tomllib.TOMLDecodeError as exc:
        raise CliError(f"invalid config {path}: {exc}", EXIT_PARSE)
    unknown = set(data) - set(_DEFAULTS)
    if unknown:
        raise CliError(
            f"unknown config keys: {', '.join(sorted(unknown))}", EXIT_PARSE
        )
    return data


def _merge_config(args: argparse.Namespace) -> dict:
    cfg = dict(_DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(_load_config_file(args.config))
    for key in _DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if cfg["seed"] is None:
        env = os.environ.get(SEED_ENV_VAR)
        cfg["seed"] = int(env) if env else DEFAULT_SEED
    return cfg


def _dump_config(cfg: dict, path: str) -> None:
    lines = []
    for key in sorted(cfg):
        if key in ("dump_config", "config"):
            continue
        value = cfg[key]
        if value is None:
            continue
        if isinstance(value, bool):
            rendered = "true" if value else "false"
        elif isinstance(value, (int, float)):
            rendered = repr(value)
        elif isinstance(value, str):
            rendered = '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
        elif isinstance(value, (list, tuple)):
            parts = []
            for item in value:
                if isinstance(item, str):
                    parts.append('"' + item + '"')
                else:
                    parts.append(repr(item))
            rendered = "[" + ", ".join(parts) + "]"
        else:
            raise CliError(f"cannot serialize config key {key}", EXIT_IO)
        lines.append(f"{key} = {rendered}")
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise CliError(f"cannot write config {path}: {exc}", EXIT_IO)


def _kernel_from(cfg: dict) -> Kernel:
    return GAUSSIAN if cfg["kernel"] == "gaussian" else EPANECHNIKOV


def _policy_from(cfg: dict) -> BandwidthPolicy:
    if cfg["fixed_h"] is not None:
        return BandwidthPolicy.fixed(float(cfg["fixed_h"]))
    return BandwidthPolicy.fifth_root()


def _clamp_from(cfg: dict) -> ClampBounds:
    return ClampBounds(float(cfg["clamp_lower"]), float(cfg["clamp_upper"]))


def _pre_from(cfg: dict) -> GaussianModel:
    return GaussianModel(float(cfg["pre_mean"]), float(cfg["pre_var"]))


def _post_from(cfg: dict, required: bool) -> Optional[GaussianModel]:
    mean, var = cfg["post_mean"], cfg["post_var"]
    if mean is None or var is None:
        if required:
            raise CliError(
                "this detector needs --post-mean and --post-var", EXIT_PARSE
            )
        return None
    return GaussianModel(float(mean), float(var))


def _window_from(cfg: dict) -> int:
    if cfg["window"] is not None:
        return int(cfg["window"])
    if cfg["window_f"] is not None and cfg["kl_lower_bound"] is not None:
        policy = WindowPolicy(
            f=float(cfg["window_f"]),
            kl_lower_bound=float(cfg["kl_lower_bound"]),
            alpha=float(cfg["alpha"]),
        )
        return window_from_alpha(policy)
    raise CliError(
        "need --window, or --window-f with --kl-lower-bound", EXIT_PARSE
    )


def _threshold_from(cfg: dict, window: int) -> float:
    if cfg["threshold"] is not None:
        return float(cfg["threshold"])
    return threshold_from_alpha(float(cfg["alpha"]), window)


def _open_output(path: str) -> TextIO:
    if path == "-":
        return sys.stdout
    try:
        return open(path, "w", encoding="utf-8", newline="")
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_IO)


def _close_output(fh: TextIO) -> None:
    if fh is not sys.stdout:
        fh.close()


def _read_stream(path: str) -> list[float]:
    if path == "-":
        lines = sys.stdin.read().splitlines()
    else:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                lines = fh.read().splitlines()
        except OSError as exc:
            raise CliError(f"cannot read input {path}: {exc}", EXIT_PARSE)
    values = []
    for lineno, raw in enumerate(lines, start=1):
        text = raw.strip()
        if not text or text.startswith("#"):
            continue
        try:
            value = float(text)
        except ValueError:
            raise CliError(
                f"line {lineno}: cannot parse {text!r} as a number", EXIT_PARSE
            )
        if not math.isfinite(value):
            raise CliError(f"line {lineno}: non-finite value {text!r}", EXIT_PARSE)
        values.append(value)
    return values


def _cmd_detect(cfg: dict) -> int:
    detector = cfg["detector"]
    if detector not in DETECTOR_KINDS:
        raise CliError(f"unknown detector {detector!r}", EXIT_PARSE)
    pre = _pre_from(cfg)
    post = _post_from(cfg, required=detector == CUSUM)
    window = _window_from(cfg) if detector != CUSUM else 0
    threshold = _threshold_from(cfg, max(window, 1))
    data = _read_stream(cfg["input"])
    stop, trace = run_detector_on_array(
        detector,
        data,
        threshold,
        pre,
        post=post,
        window=window,
        scope=cfg["scope"],
        kernel=_kernel_from(cfg),
        policy=_policy_from(cfg),
        clamp=_clamp_from(cfg),
    )
    if cfg["trace"]:
        tr = _open_output(cfg["trace"])
        try:
            tr.write("n,statistic\n")
            for i, value in enumerate(trace, start=1):
                tr.write(f"{i},{_fmt(float(value))}\n")
        finally:
            _close_output(tr)
    out = _open_output(cfg["output"])
    try:
        out.write("stopped,stopping_time,statistic_at_stop\n")
        stat = _fmt(float(trace[-1])) if trace.shape[0] else ""
        out.write(f"{_fmt(stop is not None)},{_fmt(stop)},{stat}\n")
    finally:
        _close_output(out)
    return EXIT_OK if stop is not None else EXIT_NO_ALARM


def _cmd_sweep(cfg: dict) -> int:
    detectors = cfg["detectors"]
    for kind in detectors:
        if kind not in DETECTOR_KINDS:
            raise CliError(f"unknown detector {kind!r}", EXIT_PARSE)
    pre = _pre_from(cfg)
    post = _post_from(cfg, required=True)
    model = ChangePointModel(pre=pre, post=post, change_point=1)
    thresholds = [float(b) for b in cfg["thresholds"]]
    windows = [int(w) for w in cfg["windows"]]
    out = _open_output(cfg["output"])
    try:
        out.write(
            "detector,window,threshold,mtfa,mtfa_ci,delay,delay_ci,"
            "censored_far,trials,seed\n"
        )
        for kind in detectors:
            # the known-alternative CuSum has no window: one curve suffices
            kind_windows = [0] if kind == CUSUM else windows
            for window in kind_windows:
                points = sweep_operating_characteristic(
                    kind,
                    model,
                    thresholds,
                    window,
                    int(cfg["trials"]),
                    int(cfg["seed"]),
                    max_steps=int(cfg["max_steps"]),
                    scope=cfg["scope"],
                    kernel=_kernel_from(cfg),
                    policy=_policy_from(cfg),
                    clamp=_clamp_from(cfg),
                    workers=int(cfg["workers"]),
                )
                for pt in points:
                    row = [
                        kind, window, pt.threshold, pt.mtfa, pt.mtfa_ci,
                        pt.delay, pt.delay_ci, pt.censored_far, pt.trials,
                        cfg["seed"],
                    ]
                    out.write(",".join(_fmt(v) for v in row) + "\n")
    finally:
        _close_output(out)
    return EXIT_OK


def _cmd_diagnose_density(cfg: dict) -> int:
    sizes = [int(s) for s in cfg["sizes"]]
    if len(sizes) < 3:
        raise CliError("need at least 3 sizes for the rate fit", EXIT_PARSE)
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise CliError("sizes must be strictly increasing", EXIT_PARSE)
    truth = _pre_from(cfg)
    kernel = _kernel_from(cfg)
    policy = _policy_from(cfg)
    clamp = _clamp_from(cfg)
    trials = int(cfg["trials"])
    seed = int(cfg["seed"])
    rows = []
    for size in sizes:
        mise = estimate_mise(truth, size, kernel, policy, trials=trials, seed=seed)
        kl = estimate_kl_loss(
            truth, size, kernel, policy, clamp, trials=trials, seed=seed
        )
        rows.append((size, mise, kl))
    try:
        fit = fit_rate_bounds(clamp, [(size, m.value) for size, m, _ in rows])
    except RateViolationError as exc:
        sys.stderr.write(f"rate violation: {exc}\n")
        for size, m, _ in rows:
            sys.stderr.write(f"  sample_size={size} mise={_fmt(m.value)}\n")
        return EXIT_RATE_VIOLATION
    out = _open_output(cfg["output"])
    try:
        out.write("sample_size,mise,mise_se,kl_loss,kl_se\n")
        for size, m, k in rows:
            out.write(
                f"{size},{_fmt(m.value)},{_fmt(m.stderr)},"
                f"{_fmt(k.value)},{_fmt(k.stderr)}\n"
            )
        out.write(f"# fitted_beta1 = {_fmt(fit.beta1)}\n")
        out.write(f"# fitted_beta2 = {_fmt(fit.beta2)}\n")
        out.write(f"# fitted_c3 = {_fmt(fit.c3)}\n")
    finally:
        _close_output(out)
    return EXIT_OK


def _cmd_verify(cfg: dict) -> int:
    pre = _pre_from(cfg)
    post = _post_from(cfg, required=False)
    if post is None:
        post = GaussianModel(pre.mean + 0.5 * pre.std, pre.variance)
    alpha = float(cfg["alpha"])
    window = int(cfg["window"]) if cfg["window"] is not None else 50
    seed = int(cfg["seed"])
    workers = int(cfg["workers"])
    checks = cfg["checks"]
    kernel = _kernel_from(cfg)
    policy = _policy_from(cfg)
    clamp = _clamp_from(cfg)
    out = _open_output(cfg["output"])
    all_passed = True
    seeds_note = f"seed={seed}"

    def report(name: str, passed: bool, detail: str) -> None:
        nonlocal all_passed
        all_passed = all_passed and passed
        out.write(f"{'PASS' if passed else 'FAIL'} {name} {detail} {seeds_note}\n")

    try:
        if "far" in checks:
            offset = float(cfg["debug_threshold_offset"])
            base = threshold_from_alpha(alpha, window)
            if offset:
                # rebuild the check manually at the corrupted threshold
                plan = TrialPlan(
                    detector=LOO_CUSUM,
                    model=ChangePointModel(pre=pre, post=pre, change_point=math.inf),
                    threshold=base + offset,
                    window=window,
                    trials=int(cfg["far_trials"]),
                    max_steps=math.ceil(20.0 / alpha),
                    master_seed=seed,
                    scope=cfg["scope"],
                    kernel=kernel,
                    policy=policy,
                    clamp=clamp,
                )
                mtfa = estimate_mtfa(plan, workers)
                lower_edge = mtfa.mean - 2.0 * mtfa.ci_halfwidth
                passed = lower_edge >= 1.0 / alpha
                report(
                    "false_alarm_bound",
                    passed,
                    f"threshold={base + offset:.6g} mtfa_lower={lower_edge:.6g} "
                    f"bound={1.0 / alpha:.6g}",
                )
            else:
                check = check_false_alarm_bound(
                    alpha, window, pre,
                    trials=int(cfg["far_trials"]), seed=seed,
                    scope=cfg["scope"], kernel=kernel, policy=policy,
                    clamp=clamp, workers=workers,
                )
                report(
                    "false_alarm_bound",
                    check.passed,
                    f"threshold={check.threshold:.6g} "
                    f"mtfa_lower={check.mtfa.mean - 2 * check.mtfa.ci_halfwidth:.6g} "
                    f"bound={check.bound:.6g} margin={check.margin:.3g}x",
                )
        if "slope" in checks:
            model = ChangePointModel(pre=pre, post=post, change_point=1)
            ratios = []
            for b in (6.0, 9.0, 12.0):
                plan = TrialPlan(
                    detector=CUSUM, model=model, threshold=b, window=0,
                    trials=int(cfg["delay_trials"]),
                    max_steps=int(cfg["max_steps"]), master_seed=seed,
                )
                est = estimate_delay(plan, workers)
                ratios.append(est.mean / b)
            inv_kl = 1.0 / kl_divergence(post, pre)
            passed = (
                all(r >= inv_kl for r in ratios) and ratios[-1] <= 1.4 * inv_kl
            )
            report(
                "delay_slope",
                passed,
                "ratios=" + "/".join(f"{r:.3f}" for r in ratios)
                + f" bracket=[{inv_kl:.3f},{1.4 * inv_kl:.3f}]",
            )
        if "matched" in checks:
            matched = compare_at_matched_mtfa(
                pre, post, window, float(cfg["target_mtfa"]), seed,
                far_trials=int(cfg["far_trials"]),
                delay_trials=int(cfg["delay_trials"]),
                scope=PER_TIME, kernel=kernel, policy=policy, clamp=clamp,
                workers=workers,
            )
            loo, glr, cus = (
                matched[LOO_CUSUM], matched[WL_GLR], matched[CUSUM]
            )
            slack = cus.delay_ci + min(loo.delay_ci, glr.delay_ci)
            passed = (
                loo.delay <= 1.5 * glr.delay
                and loo.delay >= cus.delay - slack
                and glr.delay >= cus.delay - slack
            )
            report(
                "matched_mtfa",
                passed,
                f"target={cfg['target_mtfa']:g} cusum={cus.delay:.2f} "
                f"glr={glr.delay:.2f} loo={loo.delay:.2f}",
            )
    finally:
        _close_output(out)
    return EXIT_OK if all_passed else EXIT_VERIFY_FAILED


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _merge_config(args)
        if cfg["dump_config"]:
            _dump_config(cfg, cfg["dump_config"])
        if args.command == "detect":
            return _cmd_detect(cfg)
        if args.command == "sweep":
            return _cmd_sweep(cfg)
        if args.command == "diagnose-density":
            return _cmd_diagnose_density(cfg)
        if args.command == "verify":
            return _cmd_verify(cfg)
        raise CliError(f"unknown command {args.command!r}", EXIT_PARSE)
    except CliError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return exc.code
    except RateViolationError as exc:
        sys.stderr.write(f"rate violation: {exc}\n")
        return EXIT_RATE_VIOLATION


if __name__ == "__main__":
    sys.exit(main())
