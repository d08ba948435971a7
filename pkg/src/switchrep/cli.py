"""Command-line interface: ``switchrep <command> [flags] [--config FILE]``.

Commands
    coeff        replicator coefficients of PC and IM updating
    thresholds   critical switching instants of a two-rule schedule
    classify     drift sum, stable point and convergence periods
    trajectory   time series from one engine (closed-form, reduced-ode,
                 pair-ode or agent)
    simulate     agent-based ensemble time series
    validate     cross-engine consistency report (JSON)

Every flag can also be given as ``key = value`` in a config file; the file
wins conflicts (with a warning on stderr). Exit codes: 0 success, 2 config
error, 3 numerical or validation failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .agent_sim import RNG_ALGORITHM, SimulationSpec, run_ensemble
from .errors import (
    DegenerateSchedule,
    GenerationFailed,
    InvalidParams,
    NegativeFitness,
    SingularState,
    StepTooLarge,
)
from .game import GameParams, UpdateRule, coefficient_im, coefficient_pc, im_margin
from .integrators import rk4_switched
from .pair_approx import PairState, integrate_switched_pair, slow_manifold
from .switched import (
    StablePoint,
    SwitchSchedule,
    classify,
    convergence_period,
    critical_instant_two_rules,
    trajectory_at,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FAILURE = 3

ENGINES = ("closed-form", "reduced-ode", "pair-ode", "agent")
FORMATS = ("csv", "json")

# tolerances used by ``validate``
CLOSED_FORM_TOL = 1e-6
# the reduced logistic is first order in omega, so the pair-ODE gap grows
# like omega * (omega t); 0.2 bounds the constant seen for k = 3..6
PAIR_TOL_FLOOR = 1e-3
PAIR_TOL_SLOPE = 0.2
AGENT_PERIODS = 5
# finite ensembles only resolve the drift sign when it is several standard
# errors from zero; a check fails only on a clear opposite sign
AGENT_AGREE_Z = 2.0
AGENT_CONTRADICT_Z = 3.0

NEUTRAL_NOTE = "Neutral: S = 0, outside the convergence results; x stays on a periodic orbit"


class ConfigError(ValueError):
    pass


def _floats(text: str) -> list:
    text = text.strip()
    if not text:
        return []
    return [float(v) for v in text.split(",")]


def _int(text: str) -> int:
    v = float(text)
    if v != int(v):
        raise ValueError(f"{text!r} is not an integer")
    return int(v)


def _choice(options):
    def conv(text: str) -> str:
        v = text.strip()
        if v not in options:
            raise ValueError(f"{v!r} is not one of {', '.join(options)}")
        return v

    return conv


def _x_cc0(text: str):
    v = text.strip().lower()
    if v in ("manifold", "uncorrelated"):
        return v
    return float(v)


# name -> (converter, default, help)
FIELDS = {
    "omega": (float, "0.01", "selection strength"),
    "degree": (_int, "4", "graph degree k"),
    "benefit": (float, "2", "benefit b"),
    "cost": (float, "0.2", "cost c"),
    "pop_size": (_int, "2000", "population size n (agent engine)"),
    "rules": (str, "PC,IM", "activation sequence: PC, IM or numeric coefficients, comma separated"),
    "instants": (_floats, "2", "interior switching instants t_1,...,t_(m-1)"),
    "period": (float, "5", "switching period T"),
    "x0": (_floats, "0.5", "initial cooperator fraction(s), comma separated"),
    "x_cc0": (_x_cc0, "manifold", "pair-ode start for x_C|C: number, 'manifold' or 'uncorrelated'"),
    "engine": (_choice(ENGINES), "closed-form", "trajectory engine"),
    "t_end": (float, "100", "final time"),
    "dt": (float, "1", "output sampling interval"),
    "step": (float, "0.001", "RK4 step for the ODE engines"),
    "seed": (_int, "1", "base seed for agent runs"),
    "runs": (_int, "10", "agent replicates"),
    "burn_in": (float, "50", "validate: time discarded before comparing pair-ode with the reduced model"),
    "out": (str, "-", "output path ('-' for stdout)"),
    "format": (_choice(FORMATS), "csv", "output format"),
}
# not part of the reproducibility echo
_NOT_ECHOED = ("out",)


@dataclass
class RunConfig:
    values: dict
    sources: dict = field(default_factory=dict)

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    def echo(self) -> dict:
        return {k: v for k, v in sorted(self.values.items()) if k not in _NOT_ECHOED}

    def fail(self, name: str, msg: str):
        raise ConfigError(f"{self.sources.get(name, name)}: field '{name}': {msg}")

    def params(self, with_n=False) -> GameParams:
        try:
            return GameParams(self.omega, self.degree, self.benefit, self.cost, self.pop_size if with_n else None)
        except InvalidParams as e:
            raise ConfigError(f"game parameters ({self._src('omega', 'degree', 'benefit', 'cost')}): {e}") from None

    def _src(self, *names):
        return ", ".join(sorted({self.sources.get(n, n) for n in names}))

    def rule_list(self, p: GameParams) -> list:
        out = []
        for tok in self.rules.split(","):
            tok = tok.strip()
            if tok.upper() == "PC":
                out.append(UpdateRule.pc(p))
            elif tok.upper() == "IM":
                out.append(UpdateRule.im(p))
            else:
                try:
                    out.append(UpdateRule.custom(float(tok)))
                except (ValueError, InvalidParams):
                    self.fail("rules", f"{tok!r} is neither PC, IM nor a number")
        return out

    def schedule(self, p: GameParams) -> SwitchSchedule:
        rules = self.rule_list(p)
        try:
            return SwitchSchedule(rules, self.instants, self.period)
        except InvalidParams as e:
            raise ConfigError(f"schedule ({self._src('rules', 'instants', 'period')}): {e}") from None

    def x0_values(self, open_interval=False) -> list:
        if not self.x0:
            self.fail("x0", "at least one initial value is needed")
        for v in self.x0:
            ok = 0.0 < v < 1.0 if open_interval else 0.0 <= v <= 1.0
            if not ok:
                rng = "(0, 1)" if open_interval else "[0, 1]"
                self.fail("x0", f"{v} is outside {rng}")
        return list(self.x0)

    def grid(self) -> np.ndarray:
        if not self.t_end > 0:
            self.fail("t_end", "must be positive")
        if not self.dt > 0:
            self.fail("dt", "must be positive")
        n = int(math.floor(self.t_end / self.dt + 1e-9))
        t = np.arange(n + 1) * self.dt
        if t[-1] < self.t_end - 1e-12:
            t = np.append(t, self.t_end)
        return t


def _read_config_file(path: str) -> list:
    """(key, raw value, 'path:line') triples from a key = value file."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as e:
        raise ConfigError(f"{path}: cannot read config file: {e.strerror}") from None
    out = []
    for n, line in enumerate(lines, 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{n}: expected 'key = value', got {line.strip()!r}")
        key, val = (s.strip() for s in text.split("=", 1))
        name = key.replace("-", "_")
        if name not in FIELDS:
            raise ConfigError(f"{path}:{n}: unknown key {key!r}")
        out.append((name, val, f"{path}:{n}"))
    return out


def resolve_config(args: argparse.Namespace, warn=None) -> RunConfig:
    """Defaults, then flags, then the config file (which wins conflicts)."""
    warn = warn or (lambda msg: print(msg, file=sys.stderr))
    raw = {name: spec[1] for name, spec in FIELDS.items()}
    sources = {name: "default" for name in FIELDS}
    for name in FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            raw[name] = v
            sources[name] = "--" + name.replace("_", "-")
    if getattr(args, "config", None):
        for name, val, where in _read_config_file(args.config):
            if sources[name].startswith("--") and raw[name].strip() != val:
                warn(f"warning: {where} sets {name}={val!r}, overriding {sources[name]}={raw[name]!r}")
            raw[name] = val
            sources[name] = where
    values = {}
    for name, text in raw.items():
        conv = FIELDS[name][0]
        try:
            values[name] = conv(text)
        except (ValueError, TypeError) as e:
            raise ConfigError(f"{sources[name]}: field '{name}': cannot parse {text!r} ({e})") from None
        if isinstance(values[name], float) and not math.isfinite(values[name]):
            raise ConfigError(f"{sources[name]}: field '{name}': value must be finite")
    return RunConfig(values, sources)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    v = float(v) + 0.0  # no "-0" in output
    if math.isnan(v):
        return "nan"
    return format(v, ".17g")


def _json_value(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, np.floating):
        return _json_value(float(v))
    return v


class Emitter:
    """Writes one command's result as CSV (with a config echo) or JSON."""

    def __init__(self, cfg: RunConfig, command: str, stream=None):
        self.cfg = cfg
        self.command = command
        self.stream = stream

    def _open(self):
        if self.stream is not None:
            return self.stream, False
        if self.cfg.out == "-":
            return sys.stdout, False
        return open(self.cfg.out, "w", encoding="utf-8", newline="\n"), True

    def write_text(self, text: str):
        fh, close = self._open()
        try:
            fh.write(text)
        finally:
            if close:
                fh.close()

    def table(self, columns, rows, extra: dict | None = None, fmt=_fmt):
        extra = extra or {}
        if self.cfg.format == "json":
            doc = {"command": self.command, "config": self.cfg.echo(), **extra, "columns": list(columns)}
            doc["rows"] = [[_json_value(float(v)) if not isinstance(v, str) else v for v in r] for r in rows]
            self.write_text(json.dumps(doc, indent=1) + "\n")
            return
        head = [f"# switchrep {__version__} {self.command} config={json.dumps(self.cfg.echo(), sort_keys=True)}"]
        for k, v in extra.items():
            head.append(f"# {k}={v}")
        body = [",".join(columns)] + [",".join(fmt(v) for v in r) for r in rows]
        self.write_text("\n".join(head + body) + "\n")

    def document(self, doc: dict):
        self.write_text(json.dumps({"command": self.command, "config": self.cfg.echo(), **doc}, indent=1) + "\n")


def _g6(v) -> str:
    return v if isinstance(v, str) else format(float(v) + 0.0, ".6g")


def _g7(v) -> str:
    return v if isinstance(v, str) else format(float(v) + 0.0, ".7g")


def cmd_coeff(cfg: RunConfig, em: Emitter, warn) -> int:
    p = cfg.params()
    a_pc, a_im = coefficient_pc(p), coefficient_im(p)
    margin = im_margin(p)
    if margin > 0:
        note = "b > (k+2)c: imitation favours cooperation"
    elif margin < 0:
        note = "b < (k+2)c: imitation favours defection"
    else:
        note = "b = (k+2)c: boundary case, imitation is neutral"
        warn("warning: b = (k+2)c lies on the boundary; alpha_IM = 0")
    if cfg.format == "json":
        em.document({"alpha_pc": a_pc, "alpha_im": a_im, "im_margin": margin, "note": note})
    else:
        em.table(["quantity", "value"], [["alpha_PC", a_pc], ["alpha_IM", a_im], ["b-(k+2)c", margin], ["note", note]], fmt=_g6)
    return EXIT_OK


def _threshold_report(s: SwitchSchedule) -> dict:
    if s.m != 2:
        return {"status": f"not applicable ({s.m} rules)"}
    a1, a2 = s.alphas
    try:
        p_given = critical_instant_two_rules(a1, a2, s.period)
        p_rev = critical_instant_two_rules(a2, a1, s.period)
    except DegenerateSchedule:
        return {"status": "degenerate", "reason": "equal coefficients, the drift sum does not depend on t_1"}
    return {
        "status": "ok",
        "p_given_order": p_given,
        "p_reversed_order": p_rev,
        "p_given_in_range": bool(0 < p_given < s.period),
        "p_reversed_in_range": bool(0 < p_rev < s.period),
    }


def cmd_thresholds(cfg: RunConfig, em: Emitter, warn) -> int:
    p = cfg.params()
    s = cfg.schedule(p)
    if s.m != 2:
        cfg.fail("rules", f"thresholds need exactly two rules, got {s.m}")
    rep = _threshold_report(s)
    if rep["status"] == "degenerate":
        print(f"error: degenerate schedule: {rep['reason']}", file=sys.stderr)
        return EXIT_FAILURE
    cl = classify(s)
    labels = "/".join(r.label for r in s.rules)
    if cfg.format == "json":
        em.document({**rep, "t1": s.instants[0], "S": cl.s_value, "stable_point": cl.stable_point.value})
    else:
        rows = [
            [f"p1 ({labels})", rep["p_given_order"]],
            [f"p2 ({'/'.join(r.label for r in reversed(s.rules))})", rep["p_reversed_order"]],
            ["t1", s.instants[0]],
            ["S", cl.s_value],
            ["stable_point", cl.stable_point.value],
        ]
        em.table(["quantity", "value"], rows, fmt=_g7)
    return EXIT_OK


def cmd_classify(cfg: RunConfig, em: Emitter, warn) -> int:
    p = cfg.params()
    s = cfg.schedule(p)
    cl = classify(s)
    conv = {}
    for x0 in cfg.x0_values(open_interval=True):
        conv[x0] = convergence_period(s, x0)
    note = NEUTRAL_NOTE if cl.stable_point is StablePoint.NEUTRAL else ""
    if cfg.format == "json":
        em.document(
            {
                "S": cl.s_value,
                "stable_point": cl.stable_point.value,
                "equilibria": list(cl.equilibria),
                "note": note,
                "convergence_period": [{"x0": x0, "theta": th} for x0, th in conv.items()],
            }
        )
    else:
        rows = [["S", _fmt(cl.s_value)], ["stable_point", cl.stable_point.value]]
        if note:
            rows.append(["note", note])
        for x0, th in conv.items():
            rows.append([f"theta_star(x0={x0:g})", "none" if th is None else str(th)])
        em.table(["quantity", "value"], rows, fmt=str)
    return EXIT_OK


def _pair_start(cfg: RunConfig, x0: float, k: int) -> PairState:
    mode = cfg.x_cc0
    if mode == "manifold":
        y = slow_manifold(x0, k)
    elif mode == "uncorrelated":
        y = x0
    else:
        y = float(mode)
    try:
        return PairState(x0, min(y, 1.0))
    except ValueError as e:
        cfg.fail("x_cc0", str(e))


def _engine_series(cfg: RunConfig, engine: str, x0: float, p: GameParams, s: SwitchSchedule, t: np.ndarray):
    """Columns (without t) for one initial value."""
    if engine == "closed-form":
        return [np.atleast_1d(trajectory_at(s, x0, t))]
    if engine == "reduced-ode":
        if not cfg.step > 0:
            cfg.fail("step", "must be positive")
        _, x = rk4_switched(s, x0, float(t[-1]), cfg.step, sample_times=t[1:])
        return [x]
    if engine == "pair-ode":
        try:
            tr = integrate_switched_pair(_pair_start(cfg, x0, p.k), s, p, float(t[-1]), cfg.step, sample_dt=cfg.dt)
        except InvalidParams as e:
            cfg.fail("rules", str(e))
        return [tr.x_c, tr.x_cc]
    raise AssertionError(engine)


def _agent_series(cfg: RunConfig, x0: float, p: GameParams, s: SwitchSchedule):
    if cfg.runs < 1:
        cfg.fail("runs", "must be at least 1")
    spec = SimulationSpec(p, s, x0, cfg.t_end, cfg.dt)
    st = run_ensemble(spec, cfg.runs, base_seed=cfg.seed)
    return st.t, [st.x_mean, st.x_std, st.x_cc_mean, st.x_cc_std]


def _series_table(cfg: RunConfig, engine: str, em: Emitter) -> int:
    xs = cfg.x0_values()
    t = cfg.grid()
    if engine == "agent":
        p = cfg.params(with_n=True)
        cols = ["t", "x_mean", "x_std", "x_cc_mean", "x_cc_std"]
        extra = {"rng": RNG_ALGORITHM}
    else:
        p = cfg.params()
        cols = ["t", "x", "x_cc"] if engine == "pair-ode" else ["t", "x"]
        extra = {}
    s = cfg.schedule(p)
    multi = len(xs) > 1
    rows = []
    for x0 in xs:
        if engine == "agent":
            tt, series = _agent_series(cfg, x0, p, s)
        else:
            tt, series = t, _engine_series(cfg, engine, x0, p, s, t)
        for j, tj in enumerate(tt):
            row = [tj] + [col[j] for col in series]
            rows.append([x0] + row if multi else row)
    em.table(["x0"] + cols if multi else cols, rows, extra=extra)
    return EXIT_OK


def cmd_trajectory(cfg: RunConfig, em: Emitter, warn) -> int:
    return _series_table(cfg, cfg.engine, em)


def cmd_simulate(cfg: RunConfig, em: Emitter, warn) -> int:
    if cfg.engine != "agent" and cfg.sources.get("engine", "default") != "default":
        warn(f"warning: simulate always uses the agent engine; ignoring engine={cfg.engine}")
    return _series_table(cfg, "agent", em)


def pair_tolerance(omega: float, span: float) -> float:
    return max(PAIR_TOL_FLOOR, PAIR_TOL_SLOPE * omega * omega * span)


def _check_closed_form(cfg, s, xs, t_end) -> dict:
    worst = 0.0
    for x0 in xs:
        t, x = rk4_switched(s, x0, t_end, cfg.step, every_step=True)
        worst = max(worst, float(np.max(np.abs(x - trajectory_at(s, x0, t)))))
    return {"max_deviation": worst, "tolerance": CLOSED_FORM_TOL, "rk4_step": cfg.step, "pass": worst < CLOSED_FORM_TOL}


def _has_custom(s: SwitchSchedule) -> bool:
    return any(r.kind.value not in ("PC", "IM") for r in s.rules)


def _check_pair(cfg, p, s, xs, t_end) -> dict:
    if _has_custom(s):
        return {"status": "skipped", "reason": "custom coefficients have no pair-approximation model", "pass": True}
    burn = cfg.burn_in
    if not 0 <= burn < t_end:
        return {"status": "skipped", "reason": f"burn-in {burn} leaves no comparison window before t_end", "pass": True}
    tol = pair_tolerance(p.omega, t_end - burn)
    worst = 0.0
    sample = min(cfg.dt, t_end - burn) if burn > 0 else cfg.dt
    for x0 in xs:
        tr = integrate_switched_pair(_pair_start(cfg, x0, p.k), s, p, t_end, cfg.step, sample_dt=sample)
        keep = tr.t >= burn - 1e-9
        t0 = float(tr.t[keep][0])
        x_start = float(tr.x_c[keep][0])
        red = trajectory_at(s, x_start, tr.t[keep], t0=t0)
        worst = max(worst, float(np.max(np.abs(tr.x_c[keep] - red))))
    return {"status": "ok", "burn_in": burn, "max_deviation": worst, "tolerance": tol, "pass": worst < tol}


def _check_agent(cfg, s, cl, xs) -> dict:
    if _has_custom(s):
        return {"status": "skipped", "reason": "custom coefficients have no microscopic update rule", "pass": True}
    p = cfg.params(with_n=True)
    if cfg.runs < 2:
        return {"status": "skipped", "reason": "needs at least 2 runs for a standard error", "pass": True}
    horizon = AGENT_PERIODS * s.period
    expected = int(np.sign(cl.s_value))
    out = []
    ok = True
    for x0 in xs:
        if not 0 < x0 < 1:
            continue
        spec = SimulationSpec(p, s, x0, horizon, horizon)
        st = run_ensemble(spec, cfg.runs, base_seed=cfg.seed)
        dx = st.x_runs[:, -1] - st.x_runs[:, 0]
        mean = float(dx.mean())
        sem = float(dx.std(ddof=1) / math.sqrt(cfg.runs))
        z = abs(mean) / sem if sem > 0 else (0.0 if mean == 0 else math.inf)
        if expected == 0:
            verdict = "agree" if z <= AGENT_CONTRADICT_Z else "contradict"
        elif int(np.sign(mean)) == expected and z > AGENT_AGREE_Z:
            verdict = "agree"
        elif int(np.sign(mean)) == -expected and z > AGENT_CONTRADICT_Z:
            verdict = "contradict"
        else:
            verdict = "inconclusive"
        ok = ok and verdict != "contradict"
        out.append({"x0": x0, "mean_delta_x": mean, "sem": sem, "expected_sign": expected, "verdict": verdict})
    return {"status": "ok", "horizon": horizon, "runs": cfg.runs, "rng": RNG_ALGORITHM, "by_x0": out, "pass": ok}


def cmd_validate(cfg: RunConfig, em: Emitter, warn) -> int:
    p = cfg.params()
    s = cfg.schedule(p)
    cl = classify(s)
    xs = cfg.x0_values()
    if not cfg.t_end > 0:
        cfg.fail("t_end", "must be positive")
    if not cfg.step > 0:
        cfg.fail("step", "must be positive")
    checks = {
        "closed_form_vs_reduced_ode": _check_closed_form(cfg, s, xs, cfg.t_end),
        "pair_ode_vs_reduced": _check_pair(cfg, p, s, xs, cfg.t_end),
        "agent_drift_sign": _check_agent(cfg, s, cl, xs),
    }
    passed = all(c["pass"] for c in checks.values())
    report = {
        "classification": {
            "S": cl.s_value,
            "stable_point": cl.stable_point.value,
            "note": NEUTRAL_NOTE if cl.stable_point is StablePoint.NEUTRAL else "",
        },
        "thresholds": _threshold_report(s),
        "checks": checks,
        "pass": passed,
    }
    em.document(report)
    return EXIT_OK if passed else EXIT_FAILURE


COMMANDS = {
    "coeff": (cmd_coeff, "print the PC and IM replicator coefficients"),
    "thresholds": (cmd_thresholds, "critical switching instants for a two-rule schedule"),
    "classify": (cmd_classify, "drift sum, stable point and convergence periods"),
    "trajectory": (cmd_trajectory, "time series from the selected engine"),
    "simulate": (cmd_simulate, "agent-based ensemble time series"),
    "validate": (cmd_validate, "cross-engine consistency report"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file; its entries override flags")
    for name, (_, default, helptext) in FIELDS.items():
        # every flag is kept as text so flag and file values share one parser
        common.add_argument("--" + name.replace("_", "-"), dest=name, default=None, help=f"{helptext} (default {default})")
    parser = argparse.ArgumentParser(prog="switchrep", description="Switched replicator dynamics on regular graphs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, helptext) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=helptext)
    return parser


def main(argv=None, stream=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    def warn(msg):
        print(msg, file=sys.stderr)

    try:
        cfg = resolve_config(args, warn)
        fn = COMMANDS[args.command][0]
        return fn(cfg, Emitter(cfg, args.command, stream), warn)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except InvalidParams as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DegenerateSchedule, SingularState, StepTooLarge, GenerationFailed, NegativeFitness) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAILURE
    except BrokenPipeError:
        # reader went away (e.g. piped into head); nothing left to report
        sys.stdout = open(os.devnull, "w")
        return EXIT_OK
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
