"""Command-line front end.

Each subcommand reads an optional JSON config (``--config``) whose keys
mirror the long flags (dashes become underscores); flags given on the
command line override the file.  Times are in units of the pulse slot
length, ``b0`` in its inverse.  Outputs are staged next to their targets
and renamed into place only after the whole command succeeds.
"""

import argparse
import csv
import functools
import json
import math
import os
import sys
import tempfile
import warnings

import numpy as np

from . import magnus, montecarlo, noise, propagator, pulses, qke
from .algebra import build_basis, structure_constants

DEFAULTS = {
    "b0": 0.0355,
    "T": 256.0,
    "n_realizations": montecarlo.DEFAULT_REALIZATIONS,
    "sigma": 0.05,
    "base_seed": 0,
    "axes": "x",
}
PULSE_NAMES = ("G", "S1", "S2", "Q1", "Q2", "hard")


class ConfigError(ValueError):
    pass


# --- config schema --------------------------------------------------------------


def _pos(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0 and math.isfinite(v)


def _nonneg_int(v):
    return isinstance(v, int) and not isinstance(v, bool) and v >= 0


def _pos_int(v):
    return _nonneg_int(v) and v > 0


def _str(v):
    return isinstance(v, str) and v != ""


def _axes(v):
    return isinstance(v, str) and v != "" and set(v) <= set("xyz") and len(set(v)) == len(v)


def _seq(v):
    return v in pulses.SEQUENCES


def _csv_list(choices):
    def check(v):
        return isinstance(v, str) and all(s in choices for s in v.split(",") if s) and v != ""
    return check


_COMMON = {"config": _str, "output": _str}
SCHEMA = {
    "design-pulse": {"order": _pos_int, "smoothness": _pos_int, "n_params": _pos_int,
                     "seed": _nonneg_int, "name": _str},
    "spectrum": {"sequence": _seq, "pulse": _str, "sigma": _pos, "M": _pos_int,
                 "method": lambda v: v in ("exact", "dft"), "hard_position": lambda v: v in ("end", "centre")},
    "order-table": {"pulses": _csv_list(PULSE_NAMES), "sequences": _csv_list(pulses.SEQUENCES),
                    "fields": _csv_list(tuple(magnus.FIELD_CONFIGS)), "sigma": _pos,
                    "scale": _pos, "K": _pos_int},
    "free-decay": {"b0": _pos, "tau0": _pos, "T": _pos, "n_realizations": _pos_int,
                   "base_seed": _nonneg_int, "dt": _pos, "record_every": _pos, "fit_output": _str},
    "simulate": {"sequence": _seq, "pulse": _str, "sigma": _pos, "b0": _pos, "tau0": _pos,
                 "axes": _axes, "T": _pos, "n_realizations": _pos_int, "base_seed": _nonneg_int,
                 "dt": _pos, "record_every": _pos, "fit_output": _str,
                 "hard_position": lambda v: v in ("end", "centre")},
    "fit": {"input": _str, "tau0": _pos, "T": _pos},
    "predict": {"sequence": _seq, "pulse": _str, "sigma": _pos, "b0": _pos, "tau0": _pos,
                "axes": _axes, "M": _pos_int, "K": _nonneg_int,
                "hard_position": lambda v: v in ("end", "centre")},
}
REQUIRED = {
    "design-pulse": ("order", "output"),
    "spectrum": ("sequence", "pulse", "output"),
    "order-table": ("output",),
    "free-decay": ("tau0", "output"),
    "simulate": ("sequence", "pulse", "tau0", "output"),
    "fit": ("input", "tau0", "output"),
    "predict": ("sequence", "pulse", "tau0", "output"),
}


def validate(command, cfg):
    schema = {**_COMMON, **SCHEMA[command]}
    for key, value in cfg.items():
        if key not in schema:
            raise ConfigError(f"{command}.{key}: unknown field")
        if value is None:
            continue
        if isinstance(value, float) and schema[key] in (_pos_int, _nonneg_int) and value.is_integer():
            value = int(value)
            cfg[key] = value
        if not schema[key](value):
            raise ConfigError(f"{command}.{key}: invalid value {value!r}")
    for key in REQUIRED[command]:
        if cfg.get(key) is None:
            raise ConfigError(f"{command}.{key}: required field missing")
    return cfg


def load_config(command, args):
    cfg = {}
    if args.get("config"):
        try:
            with open(args["config"]) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"config: cannot read {args['config']}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config: top level must be an object")
        if command in data and isinstance(data[command], dict):
            data = data[command]
        cfg.update({k.replace("-", "_"): v for k, v in data.items()})
    cfg.update({k: v for k, v in args.items() if v is not None and k != "config"})
    validate(command, cfg)
    for k, v in DEFAULTS.items():
        if k in SCHEMA[command]:
            cfg.setdefault(k, v)
    return cfg


# --- staged outputs ---------------------------------------------------------------


class Outputs:
    """Collects files written to temporaries; ``commit`` renames them into place."""

    def __init__(self):
        self._staged = []

    def path(self, target):
        d = os.path.dirname(os.path.abspath(target))
        os.makedirs(d, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=".tmp-", suffix=os.path.basename(target), dir=d)
        os.close(fd)
        self._staged.append((tmp, target))
        return tmp

    def text(self, target, content):
        with open(self.path(target), "w") as fh:
            fh.write(content)

    def commit(self):
        for tmp, target in self._staged:
            os.replace(tmp, target)
        self._staged = []

    def discard(self):
        for tmp, _ in self._staged:
            try:
                os.remove(tmp)
            except FileNotFoundError:
                pass
        self._staged = []


def _json(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# --- helpers -----------------------------------------------------------------


@functools.lru_cache(maxsize=None)
def _designed(order, smoothness):
    return pulses.design_pulse(order, smoothness, name=f"{'SQ'[order - 1]}{smoothness}")


def resolve_pulse(spec: str, sigma: float = DEFAULTS["sigma"]) -> pulses.PulseShape:
    """Pulse from a name (G, S1, S2, Q1, Q2, hard) or a pulse JSON file."""
    if spec == "G":
        return pulses.gaussian_pulse(sigma)
    if spec in ("hard", "H"):
        return pulses.hard_pulse()
    if len(spec) == 2 and spec[0] in "SQ" and spec[1] in "12":
        return _designed(1 if spec[0] == "S" else 2, int(spec[1]))
    if os.path.exists(spec):
        with open(spec) as fh:
            d = json.load(fh)
        return pulses.PulseShape.from_dict(d.get("pulse", d))
    raise ConfigError(f"pulse: unknown pulse {spec!r}; expected one of {PULSE_NAMES} or a JSON file")


def _waveform(cfg, dt=None):
    shape = resolve_pulse(cfg["pulse"], cfg.get("sigma", DEFAULTS["sigma"]))
    return pulses.build_sequence(cfg["sequence"], shape, dt=dt,
                                 hard_position=cfg.get("hard_position") or "end")


def _record_times(cfg, period, dt):
    every = cfg.get("record_every")
    if every is None:
        return None
    k = every / dt
    if abs(k - round(k)) > 1e-9:
        raise ConfigError(f"record_every: {every!r} is not a multiple of the grid step {dt!r}")
    n = int(math.floor(cfg["T"] / every + 1e-9))
    return np.arange(n + 1) * every


def _model(cfg):
    return noise.NoiseModel(cfg["b0"], cfg["tau0"], tuple(cfg.get("axes", "x")), cfg["T"])


# --- subcommands ---------------------------------------------------------------


def cmd_design_pulse(cfg, out):
    shape = pulses.design_pulse(cfg["order"], cfg.get("smoothness") or 1, cfg.get("n_params"),
                                seed=cfg.get("seed") or 0, name=cfg.get("name"))
    out.text(cfg["output"], _json(shape.to_dict()))


def cmd_spectrum(cfg, out):
    wf = _waveform(cfg)
    basis = build_basis(1)
    spec = propagator.waveform_spectrum(wf, basis, cfg.get("M"), cfg.get("method") or "exact")
    propagator.write_spectrum_csv(out.path(cfg["output"]), spec)


def cmd_order_table(cfg, out):
    names = (cfg.get("pulses") or ",".join(PULSE_NAMES[:5])).split(",")
    seqs = (cfg.get("sequences") or ",".join(pulses.SEQUENCES)).split(",")
    fields = (cfg.get("fields") or "x,z,xyz").split(",")
    shapes = {n: resolve_pulse(n, cfg.get("sigma", DEFAULTS["sigma"])) for n in names if n}
    rows = magnus.order_table([s for s in seqs if s], shapes, [f for f in fields if f],
                              K_max=cfg.get("K") or magnus.K_MAX, scale=cfg.get("scale") or 0.1)
    magnus.write_order_table(out.path(cfg["output"]), rows)


def _write_fit(cfg, out, series, tau0, T):
    if cfg.get("fit_output"):
        fit = montecarlo.fit_linear(series, tau0, T)
        out.text(cfg["fit_output"], _json(fit.to_dict()))


def cmd_free_decay(cfg, out):
    model = noise.NoiseModel(cfg["b0"], cfg["tau0"], ("x",), cfg["T"])
    dt = cfg.get("dt") or min(model.tau0 / noise.MIN_SAMPLES_PER_TAU0, 1.0 / 16)
    cfg.setdefault("record_every", 1.0)
    rec = _record_times(cfg, None, dt)
    series = montecarlo.ensemble_error(None, model, cfg["n_realizations"], rec, cfg["base_seed"], dt)
    exact = qke.exact_free_decay(model.b0, model.tau0, series.times)
    with open(out.path(cfg["output"]), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_over_tau_p", "error", "stderr", "exact"])
        for row in zip(series.times, series.error, series.stderr, exact):
            w.writerow([repr(float(v)) for v in row])
    _write_fit(cfg, out, series, model.tau0, model.T)


def cmd_simulate(cfg, out):
    model = _model(cfg)
    dt = cfg.get("dt") or 1.0 / pulses.DEFAULT_SAMPLES_PER_PULSE
    wf = _waveform(cfg, dt)
    rec = _record_times(cfg, wf.period, dt)
    series = montecarlo.ensemble_error(wf, model, cfg["n_realizations"], rec, cfg["base_seed"],
                                       meta={"pulse": cfg["pulse"]})
    montecarlo.write_series_csv(out.path(cfg["output"]), series)
    _write_fit(cfg, out, series, model.tau0, model.T)


def cmd_fit(cfg, out):
    try:
        series = montecarlo.read_series_csv(cfg["input"])
    except OSError as exc:
        raise ConfigError(f"fit.input: cannot read {cfg['input']}: {exc}") from exc
    T = cfg.get("T") or float(series.times[-1])
    fit = montecarlo.fit_linear(series, cfg["tau0"], T)
    out.text(cfg["output"], _json(fit.to_dict()))


def cmd_predict(cfg, out):
    basis = build_basis(1)
    sc = structure_constants(basis)
    wf = _waveform(cfg)
    spec = propagator.waveform_spectrum(wf, basis, cfg.get("M") or 256)
    corr = qke.gaussian_correlator(cfg["b0"], cfg["tau0"], tuple(cfg.get("axes", "x")))
    K = cfg.get("K")
    rates = qke.rate_spectrum(spec, np.zeros(3), corr, sc, K=qke.DERIVATIVE_ORDER if K is None else K)
    init = qke.initial_decoherence(spec, corr, sc)
    out.text(cfg["output"], qke.report_json(rates, init) + "\n")


COMMANDS = {
    "design-pulse": cmd_design_pulse,
    "spectrum": cmd_spectrum,
    "order-table": cmd_order_table,
    "free-decay": cmd_free_decay,
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "predict": cmd_predict,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="refocus", description="Refocusing pulse sequences under colored noise.")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config")
        p.add_argument("--output", "-o")
        return p

    p = add("design-pulse", "design a self-refocusing pulse (JSON)")
    p.add_argument("--order", type=int)
    p.add_argument("--smoothness", type=int)
    p.add_argument("--n-params", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--name")

    def seq_args(p):
        p.add_argument("--sequence")
        p.add_argument("--pulse", help="G, S1, S2, Q1, Q2, hard or a pulse JSON file")
        p.add_argument("--sigma", type=float, help="Gaussian pulse width")
        p.add_argument("--hard-position", choices=("end", "centre"))

    p = add("spectrum", "Fourier-mode norms of the toggling-frame rotation (CSV)")
    seq_args(p)
    p.add_argument("--M", type=int)
    p.add_argument("--method", choices=("exact", "dft"))

    p = add("order-table", "refocusing orders for sequences x pulses x fields (CSV)")
    p.add_argument("--pulses")
    p.add_argument("--sequences")
    p.add_argument("--fields")
    p.add_argument("--sigma", type=float)
    p.add_argument("--scale", type=float)
    p.add_argument("--K", type=int)

    def noise_args(p, axes=True):
        p.add_argument("--b0", type=float)
        p.add_argument("--tau0", type=float)
        if axes:
            p.add_argument("--axes")

    def mc_args(p):
        p.add_argument("--T", type=float)
        p.add_argument("--n-realizations", "-n", type=int)
        p.add_argument("--base-seed", type=int)
        p.add_argument("--dt", type=float)
        p.add_argument("--record-every", type=float)
        p.add_argument("--fit-output")

    p = add("free-decay", "Monte-Carlo free decay with the closed form (CSV)")
    noise_args(p, axes=False)
    mc_args(p)

    p = add("simulate", "Monte-Carlo refocusing error (CSV, optional fit JSON)")
    seq_args(p)
    noise_args(p)
    mc_args(p)

    p = add("fit", "linear fit A + B t/tau0 of an error series (JSON)")
    p.add_argument("--input", "-i")
    p.add_argument("--tau0", type=float)
    p.add_argument("--T", type=float)

    p = add("predict", "kinetic-equation rate and initial-decoherence prediction (JSON)")
    seq_args(p)
    noise_args(p)
    p.add_argument("--M", type=int)
    p.add_argument("--K", type=int)
    return ap


def main(argv=None) -> int:
    ns = vars(build_parser().parse_args(argv))
    command = ns.pop("command")
    out = Outputs()
    try:
        cfg = load_config(command, ns)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            COMMANDS[command](cfg, out)
        out.commit()
    except ConfigError as exc:
        out.discard()
        print(f"refocus: config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - any module failure is a nonzero exit
        out.discard()
        print(f"refocus: {command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
