"""Monte Carlo experiment runner and command line interface.

An experiment is described by an :class:`ExperimentSpec`: a preset (or a
custom sweep), a trial count, a master seed, and the system/objective
pairs to solve. Every trial draws one channel realization per sweep
point from its own deterministic seed, solves each requested system on
it, and the reducer averages the per-trial metrics in trial-index
order, so the output is identical for any worker count. Results go to
a UTF-8 CSV with one row per (sweep value, system, objective).

The ``convergence`` preset is the exception to the sweep pattern: its
sweep axis is the aggregate inner-iteration index, the energy-efficiency
column reports the mean best-so-far value at that iteration, and a
``noise_free_bound`` pseudo-system row set carries the upper bound the
curves are judged against (its non-EE columns are nan). The remaining
per-iteration columns replicate the trial's final solution.
"""

import argparse
import configparser
import csv
import dataclasses
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import baselines, channel, solver
from .model import ChannelKnobs, SystemConfig, desk_config, reference_config
from .solver import SolverOptions


class ConfigError(ValueError):
    """Invalid experiment description; the message names the key path."""


_TAGS = ("sudas_optimal", "sudas_suboptimal", "mimo_benchmark", "no_sudas")
_OBJECTIVES = ("ee_max", "tp_max")
_BOUND_SYSTEM = "noise_free_bound"

_COLUMNS = ("sweep", "system", "objective", "ee_bits_per_joule",
            "throughput_bps", "alpha", "beta", "mean_iters", "feasible_frac")

_SYSTEM_FIELDS = {f.name for f in dataclasses.fields(SystemConfig)} - {"channel"}
_CHANNEL_FIELDS = {f.name for f in dataclasses.fields(ChannelKnobs)}
_INT_KEYS = {"n_bs_antennas", "n_sudacs", "n_ues", "n_subcarriers",
             "n_streams_cap"}
_TUPLE_KEYS = {"r_min_dl_bps", "r_min_ul_bps"}
_BOOL_KEYS = {"fading"}

_PT_SWEEP = tuple(float(v) for v in range(19, 47, 3))
_M_SWEEP = (2.0, 4.0, 6.0, 8.0)
_SUDAS_EE = (("sudas_optimal", "ee_max"), ("sudas_suboptimal", "ee_max"))
_ALL_EE = tuple((t, "ee_max") for t in _TAGS)
_EE_AND_TP = tuple((t, o) for t in ("sudas_optimal", "mimo_benchmark", "no_sudas")
                   for o in _OBJECTIVES)

# preset -> (sweep variable, default sweep values, default systems)
_PRESETS = {
    "convergence": ("iteration", None, _SUDAS_EE),
    "ee_vs_pt": ("p_bs_max_dbm", _PT_SWEEP, _ALL_EE),
    "time_split_vs_pt": ("p_bs_max_dbm", _PT_SWEEP, _SUDAS_EE),
    "tput_vs_pt": ("p_bs_max_dbm", _PT_SWEEP, _EE_AND_TP),
    "ee_vs_m": ("n_sudacs", _M_SWEEP, _SUDAS_EE),
    "tput_vs_m": ("n_sudacs", _M_SWEEP, _SUDAS_EE),
    "custom": (None, None, None),
}


# =========================================================================
# seeding
# =========================================================================

_M64 = (1 << 64) - 1


def _splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & _M64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _M64
    return x ^ (x >> 31)


def trial_seed(master_seed, trial_index):
    """Independent per-trial seed stream from one master seed."""
    return (int(master_seed) ^ _splitmix64(int(trial_index))) & _M64


# =========================================================================
# experiment description
# =========================================================================

@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment: what to sweep, how often, and which systems."""

    preset: str
    sweep_variable: str
    sweep_values: tuple
    trials: int
    master_seed: int
    systems: tuple
    output_path: str | None = None
    desk_scale: bool = False
    iterations: int = 30
    config_overrides: tuple = ()
    channel_overrides: tuple = ()

    def __post_init__(self):
        if self.preset not in _PRESETS:
            raise ConfigError(f"experiment.preset: unknown preset {self.preset!r}")
        if self.trials < 1:
            raise ConfigError("experiment.trials: must be >= 1")
        if self.iterations < 1:
            raise ConfigError("experiment.iterations: must be >= 1")
        values = np.asarray(self.sweep_values, dtype=float)
        if values.size == 0:
            raise ConfigError("experiment.sweep_values: empty sweep")
        if values.size > 1 and not np.all(np.diff(values) > 0.0):
            raise ConfigError(
                "experiment.sweep_values: values must be strictly increasing")
        if self.preset == "convergence":
            if self.sweep_variable != "iteration":
                raise ConfigError(
                    "experiment.sweep_variable: the convergence sweep is the "
                    "iteration index")
        elif self.sweep_variable != "p_bs_max_dbm" \
                and self.sweep_variable not in _SYSTEM_FIELDS - _TUPLE_KEYS:
            raise ConfigError(
                f"experiment.sweep_variable: {self.sweep_variable!r} is not "
                "a sweepable configuration field")
        if not self.systems:
            raise ConfigError("experiment.systems: empty list")
        for tag, objective in self.systems:
            if tag not in _TAGS:
                raise ConfigError(f"experiment.systems: unknown system {tag!r}")
            if objective not in _OBJECTIVES:
                raise ConfigError(
                    f"experiment.systems: unknown objective {objective!r}")
        for key, _ in self.config_overrides:
            if key not in _SYSTEM_FIELDS:
                raise ConfigError(f"system.{key}: unknown configuration key")
        for key, _ in self.channel_overrides:
            if key not in _CHANNEL_FIELDS:
                raise ConfigError(f"channel.{key}: unknown configuration key")


def preset_spec(preset, trials=None, master_seed=0, systems=None,
                sweep_values=None, sweep_variable=None, output_path=None,
                desk_scale=False, iterations=30, config_overrides=(),
                channel_overrides=()):
    """ExperimentSpec for a named preset with defaults filled in.

    ``custom`` requires the sweep variable, sweep values, and systems;
    the other presets provide defaults for all three and accept
    overriding values and systems (a denser power grid, fewer systems).
    The trial count defaults to the full-scale campaign size, or 200
    under ``desk_scale``.
    """
    if preset not in _PRESETS:
        raise ConfigError(f"experiment.preset: unknown preset {preset!r}")
    var, values, default_systems = _PRESETS[preset]
    if preset == "custom":
        if sweep_variable is None or sweep_values is None or systems is None:
            raise ConfigError(
                "experiment: the custom preset needs sweep_variable, "
                "sweep_values, and systems")
        var = sweep_variable
    elif sweep_variable is not None and sweep_variable != var:
        raise ConfigError(
            f"experiment.sweep_variable: preset {preset!r} sweeps {var!r}")
    if preset == "convergence":
        if sweep_values is not None:
            raise ConfigError(
                "experiment.sweep_values: the convergence sweep is the "
                "iteration index")
        values = tuple(float(i) for i in range(1, int(iterations) + 1))
    elif sweep_values is not None:
        values = tuple(float(v) for v in sweep_values)
    if trials is None:
        trials = 200 if desk_scale else 10000
    return ExperimentSpec(
        preset=preset,
        sweep_variable=var,
        sweep_values=tuple(values),
        trials=int(trials),
        master_seed=int(master_seed),
        systems=tuple(systems) if systems is not None else default_systems,
        output_path=output_path,
        desk_scale=bool(desk_scale),
        iterations=int(iterations),
        config_overrides=tuple(config_overrides),
        channel_overrides=tuple(channel_overrides),
    )


# =========================================================================
# per-trial work and reduction
# =========================================================================

def _sweep_override(var, value):
    if var == "p_bs_max_dbm":
        return {"p_bs_max_w": 10.0 ** (value / 10.0) / 1000.0}
    if var in _INT_KEYS:
        return {var: int(round(value))}
    return {var: float(value)}


def _config_at(spec, sweep_value):
    over = dict(spec.config_overrides)
    if spec.preset != "convergence":
        over.update(_sweep_override(spec.sweep_variable, sweep_value))
    if spec.channel_overrides:
        over["channel"] = ChannelKnobs(**dict(spec.channel_overrides))
    builder = desk_config if spec.desk_scale else reference_config
    return builder(**over)


def _solve_system(tag, objective, ch, eff, cfg, opts):
    if tag in ("sudas_optimal", "sudas_suboptimal"):
        variant = "optimal" if tag == "sudas_optimal" else "suboptimal"
        if objective == "ee_max":
            return solver.dinkelbach_solve(eff, cfg, variant, opts)
        return solver.throughput_solve(eff, cfg, variant, opts)
    kind = baselines.BaselineKind.of(tag, cfg, objective)
    return baselines.solve_baseline(kind, ch, cfg, opts)


def _feasible(report, cfg):
    res = report.constraint_residuals
    budgets = {"C1": cfg.p_bs_max_w, "C2": cfg.p_sudas_dl_total_w,
               "C3": cfg.p_ue_max_w, "C4": cfg.p_sudas_ul_total_w}
    for name, budget in budgets.items():
        if res[name] > 1e-6 * budget:
            return 0.0
    floor_dl = max(cfg.r_min_dl_bps)
    floor_ul = max(cfg.r_min_ul_bps)
    if res["C5"] > 1e-6 * max(floor_dl, 1.0):
        return 0.0
    if res["C6"] > 1e-6 * max(floor_ul, 1.0):
        return 0.0
    for name in ("C7", "C8", "C9", "C10", "C11", "C12"):
        if res[name] > 1e-9:
            return 0.0
    return 1.0


def _metrics(report, cfg):
    pol = report.final_policy
    return (report.ee, report.throughput, pol.alpha, pol.beta,
            float(report.iterations_used), _feasible(report, cfg))


def _run_trial(job):
    spec, trial = job
    seed = trial_seed(spec.master_seed, trial)
    opts = SolverOptions(max_aggregate=spec.iterations)
    n_sys = len(spec.systems) + (1 if spec.preset == "convergence" else 0)
    out = np.zeros((len(spec.sweep_values), n_sys, 6))

    if spec.preset == "convergence":
        cfg = _config_at(spec, None)
        rng = np.random.default_rng(seed)
        ch = channel.generate(cfg, rng)
        eff = channel.effective_cnrs(ch, cfg)
        n_it = len(spec.sweep_values)
        for j, (tag, objective) in enumerate(spec.systems):
            rep = _solve_system(tag, objective, ch, eff, cfg, opts)
            curve = np.asarray(rep.ee_curve, dtype=float)
            if curve.size == 0:
                curve = np.array([rep.ee])
            idx = np.minimum(np.arange(n_it), curve.size - 1)
            out[:, j, 0] = curve[idx]
            out[:, j, 1] = rep.throughput
            out[:, j, 2] = rep.final_policy.alpha
            out[:, j, 3] = rep.final_policy.beta
            out[:, j, 4] = np.minimum(np.arange(1, n_it + 1),
                                      rep.iterations_used)
            out[:, j, 5] = _feasible(rep, cfg)
        out[:, -1, 0] = baselines.noise_free_upper_bound(eff, cfg, opts)
        out[:, -1, 1:] = np.nan
        return out

    for i, sweep_value in enumerate(spec.sweep_values):
        cfg = _config_at(spec, sweep_value)
        rng = np.random.default_rng(seed)
        ch = channel.generate(cfg, rng)
        eff = None
        for j, (tag, objective) in enumerate(spec.systems):
            if eff is None and tag in ("sudas_optimal", "sudas_suboptimal"):
                eff = channel.effective_cnrs(ch, cfg)
            rep = _solve_system(tag, objective, ch, eff, cfg, opts)
            out[i, j] = _metrics(rep, cfg)
    return out


def _row_systems(spec):
    if spec.preset == "convergence":
        return spec.systems + ((_BOUND_SYSTEM, "ee_max"),)
    return spec.systems


def run(spec: ExperimentSpec, workers: int = 1):
    """Execute the experiment and return the result rows.

    Trials are dispatched to a share-nothing worker pool and merged in
    trial-index order, so the means (and the CSV bytes) depend only on
    the spec and the master seed, never on the worker count. Writes the
    CSV when the spec carries an output path.
    """
    jobs = [(spec, t) for t in range(spec.trials)]
    if workers <= 1:
        parts = map(_run_trial, jobs)
        total = None
        for part in parts:
            total = part if total is None else total + part
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            total = None
            for part in pool.map(_run_trial, jobs):
                total = part if total is None else total + part
    means = total / float(spec.trials)

    rows = []
    for i, sweep_value in enumerate(spec.sweep_values):
        for j, (tag, objective) in enumerate(_row_systems(spec)):
            m = means[i, j]
            rows.append({
                "sweep": float(sweep_value), "system": tag,
                "objective": objective, "ee_bits_per_joule": m[0],
                "throughput_bps": m[1], "alpha": m[2], "beta": m[3],
                "mean_iters": m[4], "feasible_frac": m[5],
            })
    if spec.output_path:
        write_csv(rows, spec.output_path)
    return rows


def write_csv(rows, path):
    """UTF-8 CSV, header row, %.6e numeric formatting."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_COLUMNS)
        for row in rows:
            writer.writerow([
                "%.6e" % row["sweep"], row["system"], row["objective"],
                "%.6e" % row["ee_bits_per_joule"],
                "%.6e" % row["throughput_bps"],
                "%.6e" % row["alpha"], "%.6e" % row["beta"],
                "%.6e" % row["mean_iters"], "%.6e" % row["feasible_frac"],
            ])


# =========================================================================
# config file ingestion
# =========================================================================

_EXPERIMENT_KEYS = {"preset", "trials", "master_seed", "systems",
                    "sweep_variable", "sweep_values", "iterations",
                    "desk_scale", "output"}


def _parse_systems(text):
    systems = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        tag, _, objective = item.partition(":")
        systems.append((tag.strip(), objective.strip() or "ee_max"))
    if not systems:
        raise ConfigError("experiment.systems: empty list")
    return tuple(systems)


def _parse_number(section, key, text, kind):
    try:
        return kind(text)
    except ValueError:
        raise ConfigError(f"{section}.{key}: not a number: {text!r}") from None


def _parse_bool(section, key, text):
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{section}.{key}: not a boolean: {text!r}")


def _parse_override(section, key, text):
    if key in _TUPLE_KEYS:
        return tuple(_parse_number(section, key, v.strip(), float)
                     for v in text.split(",") if v.strip())
    if key in _BOOL_KEYS:
        return _parse_bool(section, key, text)
    if key in _INT_KEYS:
        return _parse_number(section, key, text, int)
    return _parse_number(section, key, text, float)


def load_config(path):
    """Parse an INI experiment file into keyword arguments for
    :func:`preset_spec`. Unknown sections or keys fail with the key path."""
    parser = configparser.ConfigParser(interpolation=None)
    if not parser.read(path, encoding="utf-8"):
        raise ConfigError(f"config file not found: {path}")
    for section in parser.sections():
        if section not in ("experiment", "system", "channel"):
            raise ConfigError(f"{section}: unknown section")

    kwargs = {}
    if parser.has_section("experiment"):
        for key, text in parser.items("experiment"):
            if key not in _EXPERIMENT_KEYS:
                raise ConfigError(f"experiment.{key}: unknown key")
        exp = parser["experiment"]
        if "preset" in exp:
            kwargs["preset"] = exp["preset"].strip()
        if "trials" in exp:
            kwargs["trials"] = _parse_number("experiment", "trials",
                                             exp["trials"], int)
        if "master_seed" in exp:
            kwargs["master_seed"] = _parse_number("experiment", "master_seed",
                                                  exp["master_seed"], int)
        if "iterations" in exp:
            kwargs["iterations"] = _parse_number("experiment", "iterations",
                                                 exp["iterations"], int)
        if "desk_scale" in exp:
            kwargs["desk_scale"] = _parse_bool("experiment", "desk_scale",
                                               exp["desk_scale"])
        if "systems" in exp:
            kwargs["systems"] = _parse_systems(exp["systems"])
        if "sweep_variable" in exp:
            kwargs["sweep_variable"] = exp["sweep_variable"].strip()
        if "sweep_values" in exp:
            kwargs["sweep_values"] = tuple(
                _parse_number("experiment", "sweep_values", v.strip(), float)
                for v in exp["sweep_values"].split(",") if v.strip())
        if "output" in exp:
            kwargs["output_path"] = exp["output"].strip()

    for section, target in (("system", "config_overrides"),
                            ("channel", "channel_overrides")):
        if not parser.has_section(section):
            continue
        known = _SYSTEM_FIELDS if section == "system" else _CHANNEL_FIELDS
        pairs = []
        for key, text in parser.items(section):
            if key not in known:
                raise ConfigError(f"{section}.{key}: unknown configuration key")
            pairs.append((key, _parse_override(section, key, text)))
        kwargs[target] = tuple(pairs)
    return kwargs


# =========================================================================
# command line interface
# =========================================================================

def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="sudasim",
        description="Monte Carlo energy-efficiency experiments over random "
                    "channel realizations; results are written as CSV.")
    parser.add_argument("--config", help="INI experiment description")
    parser.add_argument("--preset", choices=sorted(_PRESETS),
                        help="experiment preset (overrides the config file)")
    parser.add_argument("--trials", type=int, help="Monte Carlo trial count")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--out", help="output directory (default: current)")
    parser.add_argument("--desk-scale", action="store_true",
                        help="shrink to 64 subcarriers and 200 default trials")
    parser.add_argument("--systems",
                        help="comma list of tag[:objective] pairs, e.g. "
                             "sudas_optimal:ee_max,no_sudas:tp_max")
    parser.add_argument("--workers", type=int, default=1,
                        help="worker processes (results do not depend on it)")
    args = parser.parse_args(argv)

    try:
        kwargs = load_config(args.config) if args.config else {}
        if args.preset:
            kwargs["preset"] = args.preset
        if "preset" not in kwargs:
            raise ConfigError(
                "experiment.preset: required (give --preset or a config file)")
        if args.trials is not None:
            kwargs["trials"] = args.trials
        if args.seed is not None:
            kwargs["master_seed"] = args.seed
        if args.desk_scale:
            kwargs["desk_scale"] = True
        if args.systems:
            kwargs["systems"] = _parse_systems(args.systems)
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            kwargs["output_path"] = os.path.join(
                args.out, f"{kwargs['preset']}.csv")
        elif not kwargs.get("output_path"):
            kwargs["output_path"] = f"{kwargs['preset']}.csv"
        spec = preset_spec(**kwargs)
        rows = run(spec, workers=max(1, args.workers))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1
    print(f"{len(rows)} rows -> {spec.output_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
