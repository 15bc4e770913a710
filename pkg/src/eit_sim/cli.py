"""Command-line front end: ``eit-sim <config> [--output-dir DIR] [--seed N] [--quiet]``.

A config is a UTF-8 ``key = value`` document; ``#`` starts a comment.  All
physical inputs are in laboratory units (MHz of ordinary frequency, us, uW,
mm) and are converted once, through :func:`eit_sim.model.lab_to_internal`.
Free parameters of a FIT are declared as ``fit.<key> = initial, lower, upper``
where ``<key>`` is one of the physical keys below or ``detuning_offset_MHz``.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import FeatureNotFoundError, IllPosedFeatureError
from .fitting import OFFSET, FitProblem, FreeParameter, fit, model_spectrum, residuals, \
    synthesize_data
from .integrator import SolverOptions, evolve
from .model import SweepProgram, SystemParams, internal_to_lab, lab_to_internal, \
    probe_rabi_from_power
from .spectroscopy import BACKWARD, FORWARD, Spectrum, extract_fwhm, \
    extract_peak_populations, spectrum_from_trajectory

COMMANDS = ("SIMULATE", "FIT", "SYNTH")

SPECTRUM_COLUMNS = ("time_us", "detuning_MHz", "direction", "transmission", "pop1", "pop2",
                    "pop3", "pop4", "re_sigma21", "im_sigma21")
TRAJECTORY_COLUMNS = ("time_us", "detuning_MHz", "pop1", "pop2", "pop3", "pop4",
                      "re_sigma21", "im_sigma21", "re_sigma31", "im_sigma31", "re_sigma32",
                      "im_sigma32")
FIT_MODEL_COLUMNS = ("time_us", "detuning_MHz", "direction", "data_transmission",
                     "model_transmission", "residual")


class ConfigError(ValueError):
    def __init__(self, key, message, line=None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}key '{key}': {message}")
        self.key = key
        self.line = line


def _nonneg(v):
    return None if v >= 0 else "must be >= 0"


def _pos(v):
    return None if v > 0 else "must be > 0"


def _unit(v):
    return None if 0 <= v <= 1 else "must lie in [0, 1]"


def _atleast2(v):
    return None if v >= 2 else "must be >= 2"


# key: (type, default, check); default None means optional with no value
_KEYS = {
    "command": (str, None, None),
    "omega_c_MHz": (float, None, None),
    "omega_p_MHz": (float, None, None),
    "probe_power_uW": (float, None, _pos),
    "beam_radius_mm": (float, 0.75, _pos),
    "i_sat_mW_cm2": (float, 1.67, _pos),
    "delta_c_MHz": (float, 0.0, None),
    "gamma2_MHz": (float, 6.065, _nonneg),
    "gamma3_MHz": (float, 0.016, _nonneg),
    "gamma3p_MHz": (float, 0.0, _nonneg),
    "gamma4_MHz": (float, 1e-5, _nonneg),
    "gamma31_MHz": (float, 0.0, _nonneg),
    "gamma31_dephases_32": (bool, True, None),
    "branch_b": (float, 0.5, _unit),
    "od0": (float, 1.0, _nonneg),
    "density_scale": (float, 1.0, _nonneg),
    "sweep_start_MHz": (float, -20.0, None),
    "sweep_end_MHz": (float, 20.0, None),
    "sweep_duration_us": (float, 480.0, _pos),
    "double_scan": (bool, True, None),
    "rtol": (float, 1e-8, _pos),
    "atol": (float, 1e-10, _pos),
    "max_step_us": (float, 1.0, _pos),
    "output_points": (int, 801, _atleast2),
    "output_dir": (str, ".", None),
    "data_path": (str, None, None),
    "seed": (int, 0, _nonneg),
    "noise_sigma": (float, 0.005, _nonneg),
    "fit_starts": (int, 5, _pos),
    "fit_max_iter": (int, 2000, _pos),
}

# config key -> SystemParams field
_PHYSICAL = {
    "omega_p_MHz": "omega_p", "omega_c_MHz": "omega_c", "delta_c_MHz": "delta_c",
    "gamma2_MHz": "gamma2", "gamma3_MHz": "gamma3", "gamma3p_MHz": "gamma3p",
    "gamma4_MHz": "gamma4", "gamma31_MHz": "gamma31", "branch_b": "branch_b", "od0": "od0",
    "density_scale": "density_scale",
}


@dataclass
class RunConfig:
    command: str
    values: dict
    free: list = field(default_factory=list)

    def __getitem__(self, key):
        return self.values[key]

    def system_params(self):
        v = self.values
        lab = {_PHYSICAL[k]: v[k] for k in _PHYSICAL if v.get(k) is not None}
        lab["dephase_32"] = v["gamma31_dephases_32"]
        if v.get("omega_p_MHz") is None:
            lab["omega_p"] = 0.0
        params = SystemParams.from_lab(**lab)
        if v.get("omega_p_MHz") is None:
            _, omega_p = probe_rabi_from_power(v["probe_power_uW"], v["beam_radius_mm"],
                                               v["i_sat_mW_cm2"], params.gamma2)
            params = params.replace(omega_p=omega_p)
        return params

    def sweep(self):
        v = self.values
        return SweepProgram.from_lab(v["sweep_start_MHz"], v["sweep_end_MHz"],
                                     v["sweep_duration_us"], v["double_scan"])

    def solver(self):
        v = self.values
        return SolverOptions(rtol=v["rtol"], atol=v["atol"], max_step=v["max_step_us"],
                             output_points=v["output_points"])

    def free_parameters(self):
        out = []
        for key, (init, lo, hi) in self.free:
            if key == OFFSET:
                out.append(FreeParameter(OFFSET, init, lo, hi))
            else:
                name = _PHYSICAL[key]
                out.append(FreeParameter(name, *(lab_to_internal(name, x)
                                                 for x in (init, lo, hi))))
        return out


def _convert(key, typ, raw, line):
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {typ.__name__}", line) from None


def parse_config(text):
    """Parse and validate a config document into a :class:`RunConfig`."""
    raw = {}
    lines = {}
    free = []
    for n, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(body, "expected 'key = value'", n)
        key, value = (s.strip() for s in body.split("=", 1))
        if key.startswith("fit."):
            name = key[4:]
            if name not in _PHYSICAL and name != OFFSET:
                raise ConfigError(key, "unknown fit parameter", n)
            parts = [p.strip() for p in value.split(",")]
            if len(parts) != 3:
                raise ConfigError(key, "expected 'initial, lower, upper'", n)
            nums = [_convert(key, float, p, n) for p in parts]
            if not nums[1] <= nums[0] <= nums[2] or nums[1] == nums[2]:
                raise ConfigError(key, "need lower <= initial <= upper", n)
            free.append((name, tuple(nums)))
            continue
        if key not in _KEYS:
            raise ConfigError(key, "unknown key", n)
        if key in raw:
            raise ConfigError(key, "duplicate key", n)
        raw[key] = _convert(key, _KEYS[key][0], value, n)
        lines[key] = n

    if "command" not in raw:
        raise ConfigError("command", "missing required key")
    command = raw["command"].upper()
    if command not in COMMANDS:
        raise ConfigError("command", f"must be one of {', '.join(COMMANDS)}", lines["command"])
    values = {}
    for key, (_, default, check) in _KEYS.items():
        v = raw.get(key, default)
        if v is not None and check is not None:
            msg = check(v)
            if msg:
                raise ConfigError(key, f"unit violation: {msg} (got {v})", lines.get(key))
        values[key] = v
    values["command"] = command

    if values["omega_c_MHz"] is None:
        raise ConfigError("omega_c_MHz", "missing required key")
    if values["omega_p_MHz"] is None and values["probe_power_uW"] is None:
        raise ConfigError("probe_power_uW", "missing required key (or give omega_p_MHz)")
    if values["omega_p_MHz"] is not None and values["probe_power_uW"] is not None:
        raise ConfigError("omega_p_MHz", "give either omega_p_MHz or probe_power_uW",
                          lines["omega_p_MHz"])
    if values["sweep_start_MHz"] == values["sweep_end_MHz"]:
        raise ConfigError("sweep_end_MHz", "unit violation: sweep endpoints must differ",
                          lines.get("sweep_end_MHz"))
    if command == "FIT":
        if values["data_path"] is None:
            raise ConfigError("data_path", "missing required key")
        if not free:
            raise ConfigError("fit.*", "FIT needs at least one free parameter")
    return RunConfig(command=command, values=values, free=free)


def load_config(path):
    return parse_config(Path(path).read_text(encoding="utf-8"))


# --------------------------------------------------------------------------
# CSV

def _fmt(x):
    return format(float(x), ".9g")


def write_spectrum_csv(spec, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SPECTRUM_COLUMNS)
        for k in range(len(spec)):
            p = spec.populations[k]
            w.writerow([_fmt(spec.time_us[k]), _fmt(spec.detuning_MHz[k]), spec.direction[k],
                        _fmt(spec.transmission[k]), _fmt(p[0]), _fmt(p[1]), _fmt(p[2]),
                        _fmt(p[3]), _fmt(spec.sigma21[k].real), _fmt(spec.sigma21[k].imag)])


def read_spectrum_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != SPECTRUM_COLUMNS:
        raise ValueError(f"{path}: header must be {','.join(SPECTRUM_COLUMNS)}")
    body = rows[1:]
    if not body:
        raise ValueError(f"{path}: no data rows")
    num = np.array([[float(r[i]) for i in (0, 1, 3, 4, 5, 6, 7, 8, 9)] for r in body])
    direction = np.array([r[2] for r in body])
    bad = set(direction) - {FORWARD, BACKWARD}
    if bad:
        raise ValueError(f"{path}: unknown direction tags {sorted(bad)}")
    return Spectrum(time_us=num[:, 0], detuning_MHz=num[:, 1], direction=direction,
                    transmission=num[:, 2], populations=num[:, 3:7],
                    sigma21=num[:, 7] + 1j * num[:, 8])


def write_trajectory_csv(traj, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        s = traj.states
        for k in range(len(traj)):
            row = [traj.t[k], internal_to_lab("delta_c", traj.delta_p[k])]
            row += [s[k, i, i].real for i in range(4)]
            for i, j in ((1, 0), (2, 0), (2, 1)):
                row += [s[k, i, j].real, s[k, i, j].imag]
            w.writerow([_fmt(x) for x in row])


def _write_kv(path, items):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, value in items:
            if isinstance(value, float):
                value = _fmt(value)
            fh.write(f"{key} = {value}\n")


# --------------------------------------------------------------------------
# commands

def _fwhm_or_reason(spec, direction):
    try:
        return _fmt(extract_fwhm(spec, direction)), ""
    except (FeatureNotFoundError, IllPosedFeatureError) as err:
        return "nan", str(err)


def _simulate(cfg, out, log):
    params = cfg.system_params()
    traj = evolve(params, cfg.sweep(), cfg.solver())
    spec = spectrum_from_trajectory(traj, params)
    write_spectrum_csv(spec, out / "spectrum.csv")
    write_trajectory_csv(traj, out / "trajectory.csv")
    max3, final4 = extract_peak_populations(traj)
    items = [("omega_p_MHz", internal_to_lab("omega_p", params.omega_p)),
             ("omega_c_MHz", internal_to_lab("omega_c", params.omega_c))]
    if cfg["probe_power_uW"] is not None:
        s, _ = probe_rabi_from_power(cfg["probe_power_uW"], cfg["beam_radius_mm"],
                                     cfg["i_sat_mW_cm2"], params.gamma2)
        items.append(("probe_sat_fraction", s))
    for d in spec.directions:
        value, reason = _fwhm_or_reason(spec, d)
        items.append((f"fwhm_{d.lower()}_MHz", value))
        if reason:
            items.append((f"fwhm_{d.lower()}_note", reason))
    items += [("max_pop3", max3), ("final_pop4", final4),
              ("solver_steps", traj.stats.steps), ("solver_rejected", traj.stats.rejected_steps),
              ("rhs_evals", traj.stats.rhs_evals)]
    _write_kv(out / "summary.txt", items)
    log(f"wrote {out / 'spectrum.csv'}, {out / 'trajectory.csv'}, {out / 'summary.txt'}")


def _synth(cfg, out, log):
    spec = synthesize_data(cfg.system_params(), cfg.sweep(), cfg["noise_sigma"], cfg["seed"],
                           cfg.solver())
    write_spectrum_csv(spec, out / "synthetic.csv")
    log(f"wrote {out / 'synthetic.csv'}")


def _fit(cfg, out, log):
    data = read_spectrum_csv(cfg["data_path"])
    problem = FitProblem(data=data, free=tuple(cfg.free_parameters()), fixed=cfg.system_params(),
                         sweep=cfg.sweep(), solver=cfg.solver(), seed=cfg["seed"])
    result = fit(problem, n_starts=cfg["fit_starts"], max_iter=cfg["fit_max_iter"])
    res = residuals(result.values, problem)
    model = data.transmission + res
    with open(out / "fit_model.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIT_MODEL_COLUMNS)
        for k in range(len(data)):
            w.writerow([_fmt(data.time_us[k]), _fmt(data.detuning_MHz[k]), data.direction[k],
                        _fmt(data.transmission[k]), _fmt(model[k]), _fmt(res[k])])
    items = []
    for name in problem.names:
        key = name if name == OFFSET else next(k for k, v in _PHYSICAL.items() if v == name)
        to_lab = (lambda x: x) if name == OFFSET else (lambda x, n=name: internal_to_lab(n, x))
        items.append((key, to_lab(result.values[name])))
        items.append((f"{key}_stderr", to_lab(result.uncertainties.get(name, float("nan")))))
    best = model_spectrum(result.params, problem.sweep, problem.solver)
    value, reason = _fwhm_or_reason(best, FORWARD if FORWARD in best.directions else BACKWARD)
    items += [("sse", result.sse), ("n_points", len(data)), ("n_iter", result.n_iter),
              ("n_eval", result.n_eval), ("converged", str(result.converged).lower()),
              ("best_fit_fwhm_MHz", value)]
    if reason:
        items.append(("best_fit_fwhm_note", reason))
    _write_kv(out / "fit_report.txt", items)
    log(f"wrote {out / 'fit_report.txt'}, {out / 'fit_model.csv'}")


_RUNNERS = {"SIMULATE": _simulate, "SYNTH": _synth, "FIT": _fit}


def run(config, output_dir=None, quiet=False):
    """Execute *config*; returns the process exit status."""
    def log(msg):
        if not quiet:
            print(msg)

    out = Path(output_dir if output_dir is not None else config["output_dir"])
    stage = "output"
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_test"
        probe.write_text("")
        probe.unlink()
        stage = config.command.lower()
        _RUNNERS[config.command](config, out, log)
    except OSError as err:
        target = err.filename or out
        print(f"eit-sim: {stage} failed: cannot write or read {target}: {err.strerror}",
              file=sys.stderr)
        return 2
    except Exception as err:  # rendered as a one-line diagnostic
        print(f"eit-sim: {stage} failed: {type(err).__name__}: {err}", file=sys.stderr)
        return 1
    return 0


def main(argv=None):
    ap = argparse.ArgumentParser(prog="eit-sim", description=__doc__.splitlines()[0])
    ap.add_argument("config", help="key = value configuration file")
    ap.add_argument("--output-dir", help="directory for output files (overrides output_dir)")
    ap.add_argument("--seed", type=int, help="random seed (overrides seed)")
    ap.add_argument("--quiet", action="store_true", help="suppress progress messages")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    args = ap.parse_args(argv)
    try:
        cfg = load_config(args.config)
    except (OSError, ConfigError) as err:
        print(f"eit-sim: config failed: {err}", file=sys.stderr)
        return 2
    if args.seed is not None:
        if args.seed < 0:
            print("eit-sim: config failed: key 'seed': must be >= 0", file=sys.stderr)
            return 2
        cfg.values["seed"] = args.seed
    return run(cfg, args.output_dir, args.quiet)


if __name__ == "__main__":
    sys.exit(main())
