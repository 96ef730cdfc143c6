"""Batch experiment runner: ``crem analyze|run|hardness|sweep|paths``.

Options come from an optional flat ``key = value`` config file, overridden by
command-line flags.  List-valued options (``N``, ``M``, ``x``, ``profile`` in
sweeps) are comma separated; seeds are ``s0:count`` or a comma list.

Exit codes: 0 success, 1 validation error, 2 guard or budget violation.
"""

from __future__ import annotations

import argparse
import itertools
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import covariance as cov
from . import hardness as hd
from . import records as rec
from . import search as se
from .field import FIELD_VERSION, BudgetError, FieldError, FieldOracle, ModeError

COMMANDS = ("analyze", "run", "hardness", "sweep", "paths")

EXIT_OK, EXIT_INVALID, EXIT_GUARD = 0, 1, 2


class ConfigError(ValueError):
    pass


def parse_seeds(text: str) -> list[int]:
    text = str(text).strip()
    if ":" in text:
        s0, count = text.split(":")
        seeds = list(range(int(s0), int(s0) + int(count)))
    else:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    if not seeds:
        raise ConfigError("seed list is empty")
    return seeds


def _ints(text) -> list[int]:
    return [int(float(s)) for s in str(text).split(",") if s.strip()]


def _floats(text) -> list[float]:
    return [float(s) for s in str(text).split(",") if s.strip()]


@dataclass
class ExperimentConfig:
    command: str
    profile: list = field(default_factory=lambda: ["brw"])
    grid: int = 4096
    N: list = field(default_factory=lambda: [20])
    M: list = field(default_factory=list)
    ell: int | None = None
    x: list = field(default_factory=list)
    K: int | None = None
    epsilon: float | None = None
    seeds: list = field(default_factory=lambda: [0])
    budget: int | None = None
    samples: int = 1000
    algorithm: str | None = None
    out: Path = Path("crem_out")
    format: str = "records"
    jobs: int = 1
    steep: bool = False

    def validate(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if not self.seeds:
            raise ConfigError("seed list is empty")
        if any(n < 1 for n in self.N):
            raise ConfigError("N must be at least 1")
        if self.format not in ("records", "csv"):
            raise ConfigError("format must be records or csv")
        if self.jobs < 1:
            raise ConfigError("jobs must be positive")
        for p in self.profile:
            load_profile_spec(p, self.grid)
        return self


_CONVERT = {
    "profile": lambda s: [p.strip() for p in _split_profiles(str(s))],
    "grid": int,
    "N": _ints,
    "M": _ints,
    "ell": lambda s: int(s),
    "x": _floats,
    "K": lambda s: int(s),
    "epsilon": float,
    "seeds": parse_seeds,
    "budget": lambda s: int(float(s)),
    "samples": lambda s: int(float(s)),
    "algorithm": str,
    "out": Path,
    "format": str,
    "jobs": int,
    "steep": lambda s: str(s).lower() in ("1", "true", "yes", "on"),
}


def _split_profiles(text: str) -> list[str]:
    # commas inside two_slope(...) do not separate profiles
    parts, depth, cur = [], 0, ""
    for ch in text:
        depth += ch == "("
        depth -= ch == ")"
        if ch == "," and depth == 0:
            parts.append(cur)
            cur = ""
        else:
            cur += ch
    parts.append(cur)
    return [p for p in parts if p.strip()]


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in _CONVERT:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = value
    return out


def load_profile_spec(spec: str, grid: int = 4096) -> cov.CovarianceProfile:
    """A profile file path or a builtin name."""
    if Path(spec).is_file():
        return cov.load_profile(spec)
    return cov.builtin_profile(spec, grid)


def _tag(spec: str) -> str:
    return Path(spec).stem if Path(spec).is_file() else spec


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_config(argv=None) -> ExperimentConfig:
    parser = _Parser(prog="crem", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="flat key = value file")
    for key in _CONVERT:
        parser.add_argument(f"--{key}", dest=key, default=None)
    args = parser.parse_args(argv)
    raw = read_config_file(args.config) if args.config else {}
    raw.update({k: v for k, v in vars(args).items() if k in _CONVERT and v is not None})
    kw = {}
    for key, value in raw.items():
        try:
            kw[key] = _CONVERT[key](value)
        except (TypeError, ValueError) as err:
            raise ConfigError(f"bad value for {key}: {value!r} ({err})") from None
    if "jobs" not in kw:
        kw["jobs"] = os.cpu_count() or 1
    return ExperimentConfig(args.command, **kw).validate()


# -- commands ------------------------------------------------------------------


def cmd_analyze(config: ExperimentConfig, echo=print) -> list[dict]:
    out = Path(config.out)
    reports = []
    for spec in config.profile:
        p = load_profile_spec(spec, config.grid)
        rep = cov.thresholds(p)
        tag = _tag(spec)
        d = rep.as_dict()
        d.update(profile_id=tag, profile_hash=cov.profile_hash(p), regime=rep.regime)
        reports.append(d)
        hull = rep.hull
        rec.write_columns(out / f"{tag}_hull.dat", hull.t, hull.A, header="t hull_A")
        rec.write_columns(out / f"{tag}_profile.dat", p.t, p.A, header="t A")
        for name, path in (("z", cov.optimal_path(p)), ("zstar", cov.natural_speed_path(p))):
            rec.write_columns(out / f"{tag}_{name}.dat", path.grid, path.values, header=f"t {name}")
        with open(out / f"{tag}_thresholds.txt", "w") as fh:
            for k, v in d.items():
                fh.write(f"{k} {v}\n")
        echo(f"{tag}: x*={rep.x_star:.6f} x_s={rep.x_s:.6f} x_c={rep.x_c:.6f} beta_c={rep.beta_c:.6f}")
        echo(f"{' ' * len(tag)}  x_G={rep.x_G:.6f} beta_G={rep.beta_G:.6f} t_G={rep.t_G:.6f} regime {rep.regime}")
    rec.write_records(out / "analyze.jsonl", reports)
    return reports


def _algorithm_for(config: ExperimentConfig) -> str:
    if config.algorithm:
        return config.algorithm
    return "leaf_only_greedy" if config.ell is not None else "block_greedy"


def run_one(profile: cov.CovarianceProfile, profile_id: str, algorithm: str, N: int, M: int,
            ell: int | None, seed: int, budget: int | None = None) -> dict:
    """One search run as a record."""
    mode = "leaf_only" if algorithm == "leaf_only_greedy" else "full_tree"
    oracle = FieldOracle(profile, N, seed, mode=mode, track_unique=False)
    if algorithm == "block_greedy":
        res = se.block_greedy(oracle, M)
    elif algorithm == "leaf_only_greedy":
        res = se.leaf_only_greedy(oracle, M, ell)
    elif algorithm == "exhaustive_max":
        res = se.exhaustive_max(oracle)
    elif algorithm == "random_leaf_baseline":
        res = se.random_leaf_baseline(oracle, budget or 1, seed)
    else:
        raise ConfigError(f"unknown algorithm {algorithm!r}")
    return {
        "algorithm": algorithm, "profile_id": profile_id, "profile_hash": cov.profile_hash(profile),
        "N": N, "M": M, "ell": ell, "seed": seed, "x": None, "hit": None, "tau": None,
        "best_value": res.value, "value_over_N": res.value / N, "node": res.node.path,
        "unique_queries": res.unique_queries, "total_calls": res.total_calls,
        "elapsed_ms": 1000 * res.elapsed, "field_version": FIELD_VERSION,
    }


def _tasks_run(config: ExperimentConfig):
    alg = _algorithm_for(config)
    Ms = config.M or [None]
    if alg in ("block_greedy", "leaf_only_greedy") and not config.M:
        raise ConfigError(f"{alg} needs M")
    for spec, N, M in itertools.product(config.profile, config.N, Ms):
        for seed in config.seeds:
            yield (spec, config.grid, alg, N, M, config.ell, seed, config.budget)


def _do_run(task):
    spec, grid, alg, N, M, ell, seed, budget = task
    p = load_profile_spec(spec, grid)
    return run_one(p, spec, alg, N, M, ell, seed, budget)


def _map(fn, tasks, jobs):
    tasks = list(tasks)
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))  # map keeps task order, so output is order-independent


def _emit(config: ExperimentConfig, name: str, records: list[dict], summary_keys) -> None:
    out = Path(config.out)
    if config.format == "records":
        rec.write_records(out / f"{name}.jsonl", records)
    else:
        rec.write_csv(out / f"{name}.csv", records)
    if summary_keys:
        rec.write_csv(out / f"{name}_summary.csv", rec.summarize(records, summary_keys))


def cmd_run(config: ExperimentConfig, echo=print) -> list[dict]:
    records = _map(_do_run, _tasks_run(config), config.jobs)
    _emit(config, "run", records, ("algorithm", "profile_id", "N", "M", "ell"))
    for row in rec.summarize(records, ("algorithm", "profile_id", "N", "M", "ell")):
        echo(f"{row['algorithm']} {row['profile_id']} N={row['N']} M={row['M']} ell={row['ell']}: "
             f"mean X/N={row['mean_value_over_N']:.5f} sd={row['std_value_over_N'] or 0:.5f} "
             f"queries={row['mean_unique_queries']:.0f} (n={row['n']})")
    return records


def _do_mc(task):
    spec, grid, N, K, eps, samples, seed = task
    p = load_profile_spec(spec, grid)
    try:
        r = hd.steep_chain_probability_mc(p, N, hd.SteepParams(eps, K), samples, seed)
    except (BudgetError, ValueError) as err:
        return {"kind": "steep_mc", "profile_id": spec, "N": N, "K": K, "epsilon": eps, "seed": seed,
                "samples": samples, "error": str(err), "guard": isinstance(err, BudgetError)}
    d = r.as_record()
    d.update(kind="steep_mc", profile_id=spec, hits=r.hits, violation=r.violation,
             field_version=FIELD_VERSION)
    return d


def _hit_algorithms(config: ExperimentConfig):
    if config.algorithm:
        names = config.algorithm.split(",")
    else:
        names = ["block_greedy", "leaf_only_greedy", "random_leaf_baseline"]
    M = config.M[0] if config.M else 10
    ell = config.ell if config.ell is not None else 5
    return [se.AlgorithmSpec(n, M=None if n == "random_leaf_baseline" else M,
                             ell=ell if n == "leaf_only_greedy" else None) for n in names]


def _do_hit(task):
    spec, grid, N, x, alg, budget, seed = task
    p = load_profile_spec(spec, grid)
    out = se.hitting_time_experiment(p, N, x, alg, budget, [seed], profile_id=spec)[0]
    out["kind"] = "hitting_time"
    return out


def hardness_tasks(config: ExperimentConfig):
    mc, hit = [], []
    for spec in config.profile:
        p = load_profile_spec(spec, config.grid)
        if config.K is not None and config.epsilon is not None:
            params = [hd.SteepParams(config.epsilon, config.K)]
        elif config.steep:
            params = [hd.steep_threshold_params(p, x) for x in config.x]  # guards x <= x*
        else:
            params = []
        base = config.seeds[0]
        for sp in params:
            for N in config.N:
                mc.append((spec, config.grid, N, sp.K, sp.epsilon, config.samples, base))
        if config.x:
            budget = config.budget or 10**6
            for N, x in itertools.product(config.N, config.x):
                for alg in _hit_algorithms(config):
                    hit.extend((spec, config.grid, N, x, alg, budget, s) for s in config.seeds)
    if not mc and not hit:
        raise ConfigError("hardness needs --K and --epsilon, --steep with --x, or --x for hitting times")
    return mc, hit


def cmd_hardness(config: ExperimentConfig, echo=print) -> list[dict]:
    mc, hit = hardness_tasks(config)
    records = _map(_do_mc, mc, config.jobs) + _map(_do_hit, hit, config.jobs)
    out = Path(config.out)
    mc_recs = [r for r in records if r["kind"] == "steep_mc"]
    hit_recs = [r for r in records if r["kind"] == "hitting_time"]
    if config.format == "records":
        rec.write_records(out / "hardness.jsonl", records)
    else:
        if mc_recs:
            rec.write_csv(out / "steep_mc.csv", mc_recs)
        if hit_recs:
            rec.write_csv(out / "hitting_time.csv", hit_recs)
    for r in mc_recs:
        if "error" in r:
            echo(f"steep MC N={r['N']} K={r['K']}: skipped ({r['error']})")
        else:
            echo(f"steep MC N={r['N']} K={r['K']} eps={r['epsilon']:.4g}: p={r['empirical_p']:.3g} "
                 f"[{r['ci_low']:.3g}, {r['ci_high']:.3g}] bound={r['bound']:.3g}"
                 + (" VIOLATION" if r["violation"] else ""))
    if hit_recs:
        rows = rec.summarize(hit_recs, ("algorithm", "profile_id", "N", "x"), value="best_value")
        rec.write_csv(out / "hitting_time_summary.csv", rows)
        for row in rows:
            echo(f"hit {row['algorithm']} {row['profile_id']} N={row['N']} x={row['x']:.4f}: "
                 f"fraction {row['hit_fraction']:.2f} (n={row['n']})")
    if any(r.get("guard") for r in mc_recs):
        raise BudgetError("some cells violated the spindle width guard")
    return records


def cell_seed(base_seed: int, index: int) -> int:
    """Deterministic seed of sweep cell ``index``."""
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1, np.uint64)[0])


def cmd_sweep(config: ExperimentConfig, echo=print) -> list[dict]:
    axes = {"profile": config.profile, "N": config.N, "M": config.M or [None], "x": config.x or [None]}
    cells = list(itertools.product(*axes.values()))
    if not cells or not config.seeds:
        raise ConfigError("nothing to run")
    n_seeds = len(config.seeds)
    base = config.seeds[0]
    records, errors = [], []
    for idx, (spec, N, M, x) in enumerate(cells):
        start = cell_seed(base, idx) % (1 << 62)
        sub = replace(config, profile=[spec], N=[N], M=[M] if M is not None else [],
                      x=[x] if x is not None else [], seeds=list(range(start, start + n_seeds)),
                      out=Path(config.out) / f"cell{idx:03d}")
        try:
            recs = cmd_hardness(sub, echo=lambda *_: None) if x is not None else cmd_run(sub, echo=lambda *_: None)
        except (ConfigError, BudgetError, ValueError, ModeError) as err:
            errors.append({"cell": idx, "error": str(err)})
            echo(f"cell {idx}: {err}")
            continue
        for r in recs:
            r["cell"] = idx
        records.extend(recs)
    out = Path(config.out)
    rec.write_records(out / "sweep.jsonl", records + errors)
    runs = [r for r in records if r.get("kind") is None]
    if runs:
        rows = rec.summarize(runs, ("cell", "algorithm", "profile_id", "N", "M", "ell"))
        rec.write_csv(out / "sweep_summary.csv", rows)
        for row in rows:
            echo(f"cell {row['cell']} {row['profile_id']} N={row['N']} M={row['M']}: "
                 f"mean X/N={row['mean_value_over_N']:.5f}")
    return records


def cmd_paths(config: ExperimentConfig, echo=print) -> list[dict]:
    """Analytic paths z and z*, and the trajectory of a greedy run against them."""
    out = Path(config.out)
    rows = []
    for spec in config.profile:
        p = load_profile_spec(spec, config.grid)
        tag = _tag(spec)
        zs = cov.natural_speed_path(p)
        z = cov.optimal_path(p)
        rec.write_columns(out / f"{tag}_zstar.dat", zs.grid, zs.values, header="t zstar")
        rec.write_columns(out / f"{tag}_z.dat", z.grid, z.values, header="t z")
        for N, M in itertools.product(config.N, config.M or []):
            for seed in config.seeds:
                oracle = FieldOracle(p, N, seed)
                res = se.block_greedy(oracle, M)
                traj = FieldOracle(p, N, seed).trajectory(res.node)
                t = np.arange(N + 1) / N
                rec.write_columns(out / f"{tag}_N{N}_M{M}_seed{seed}_trajectory.dat",
                                  t, traj / N, zs(t), header="t X/N zstar")
                rows.append({"profile_id": spec, "N": N, "M": M, "seed": seed,
                             "value_over_N": res.value / N, "gap_to_zstar": float(np.max(zs(t) - traj / N))})
        echo(f"{spec}: z*(1)={zs.end:.6f} z(1)={z.end:.6f}")
    rec.write_records(out / "paths.jsonl", rows)
    return rows


COMMAND_FUNCS = {"analyze": cmd_analyze, "run": cmd_run, "hardness": cmd_hardness,
                 "sweep": cmd_sweep, "paths": cmd_paths}


def main(argv=None) -> int:
    try:
        config = build_config(argv)
        t0 = time.perf_counter()
        COMMAND_FUNCS[config.command](config)
        print(f"done in {time.perf_counter() - t0:.1f} s, output in {config.out}", file=sys.stderr)
    except (BudgetError, hd.ThresholdGuardError) as err:
        print(f"crem: guard: {err}", file=sys.stderr)
        return EXIT_GUARD
    except (ConfigError, cov.ProfileError, FieldError, ValueError, OSError) as err:
        print(f"crem: error: {err}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
