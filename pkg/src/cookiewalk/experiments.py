"""Reproducible experiment runners emitting plot-ready CSV tables.

Every table starts with a ``#`` line carrying the experiment id, the config
hash and the units, followed by a column header.  Floats are written with
17 significant digits so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .blp import (
    DEFAULT_EPS,
    binomial_half_width,
    concentration_check,
    extinction_estimate,
    params_exact,
)
from .classify import certify_survival
from .env import CookieEnvironment, parse_strength
from .errors import DomainError, SpecParseError
from .specfile import (
    parse_float_grid,
    parse_inline_env,
    parse_int_grid,
    parse_key_values,
)
from .walk import direction_stats_from, right_escape_fraction, simulate

EXPERIMENTS = ("params", "transient-certificate", "concentration", "walk-blp", "all")

# δ = 2, 0, -2 and 1/2
CONSISTENCY_ENVS = (
    "finite:5/6,5/6,5/6",
    "finite:",
    "reflect(finite:5/6,5/6,5/6)",
    "finite:3/4",
)


def _default_n_grid():
    return [2**k for k in range(4, 18)]


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "all"
    env: str = "transient-example"
    n_grid: list = field(default_factory=_default_n_grid)
    eps_grid: list = field(default_factory=lambda: [0.2, 0.5, 1.0])
    conc_n_grid: list = field(default_factory=lambda: [50, 200, 1000])
    cert_n_grid: list = field(default_factory=lambda: [2**k for k in range(7, 18)])
    consistency_envs: list = field(default_factory=lambda: list(CONSISTENCY_ENVS))
    reps: int = 1000
    seed: int = 1
    horizon: int = 10**5
    max_gen: int = 1000
    dp_eps: float = DEFAULT_EPS
    c_test: float = 1.0 / 16.0
    conc_reps: int = 0
    out_dir: str = "results"

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise DomainError(f"unknown experiment {self.experiment!r}")
        for name in ("n_grid", "eps_grid", "conc_n_grid", "cert_n_grid"):
            grid = list(getattr(self, name))
            if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
                raise DomainError(f"{name} must be non-empty and strictly increasing")
            object.__setattr__(self, name, grid)
        if not self.consistency_envs:
            raise DomainError("consistency_envs must be non-empty")
        object.__setattr__(self, "consistency_envs", list(self.consistency_envs))
        if self.reps < 1 or self.horizon < 1 or self.max_gen < 1 or self.seed < 0:
            raise DomainError("reps, horizon and max_gen must be >= 1 and seed >= 0")
        parse_inline_env(self.env)
        for spec in self.consistency_envs:
            parse_inline_env(spec)

    @property
    def environment(self) -> CookieEnvironment:
        return parse_inline_env(self.env)

    def config_hash(self) -> str:
        """Hash of everything that affects results (``out_dir`` excluded)."""
        body = asdict(self)
        body.pop("out_dir")
        text = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


_CONFIG_PARSERS = {
    "experiment": str.strip,
    "env": str.strip,
    "n_grid": parse_int_grid,
    "eps_grid": parse_float_grid,
    "conc_n_grid": parse_int_grid,
    "cert_n_grid": parse_int_grid,
    "consistency_envs": lambda v: [s.strip() for s in v.split(";") if s.strip()],
    "reps": int,
    "seed": int,
    "horizon": lambda v: int(float(v)),
    "max_gen": int,
    "dp_eps": float,
    "c_test": parse_strength,
    "conc_reps": int,
    "out_dir": str.strip,
}


def parse_config_text(text: str) -> ExperimentConfig:
    """Config document in the key-value format; ``consistency_envs`` is ``;``-separated."""
    kv = parse_key_values(text)
    values = {}
    for key, raw in kv.items():
        parser = _CONFIG_PARSERS.get(key)
        if parser is None:
            raise SpecParseError("unknown config key", line=kv.line(key), key=key)
        try:
            values[key] = parser(raw)
        except (ValueError, ArithmeticError) as exc:
            raise SpecParseError(str(exc), line=kv.line(key), key=key) from None
    try:
        return ExperimentConfig(**values)
    except (DomainError, SpecParseError) as exc:
        raise SpecParseError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text())


# ---------------------------------------------------------------------------
# table output


def fmt(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


@dataclass(frozen=True)
class Table:
    name: str
    columns: list
    rows: list
    units: str
    meta: dict = field(default_factory=dict)

    def to_csv(self, experiment: str, config_hash: str) -> str:
        meta = "".join(f" {k}={fmt(v)}" for k, v in sorted(self.meta.items()))
        head = f"# experiment={experiment} table={self.name} config={config_hash}{meta} units: {self.units}"
        buf = io.StringIO()
        buf.write(head + "\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        writer.writerows([fmt(v) for v in row] for row in self.rows)
        return buf.getvalue()


def _map(fn, items, threads):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# experiments


def _rate_b(b):
    return 0.0 if b <= 0.0 else b * math.log(1.0 / b) ** 4


def exp_params_table(config: ExperimentConfig, threads: int = 1) -> Table:
    env = config.environment
    delta = env.total_drift().value
    params = _map(lambda n: params_exact(env, n, config.dp_eps), config.n_grid, threads)
    rows = []
    for p in params:
        b = env.env_stats(p.n).bessel_gap
        rows.append([
            p.n, p.mu_n, p.rho_n, p.nu_n, p.theta_n,
            abs(p.rho_n - delta), abs(p.nu_n - 2.0),
            math.log(p.n) ** 4 / math.sqrt(p.n), _rate_b(b), p.tail_mass,
        ])
    cols = [
        "n", "mu", "rho", "nu", "theta", "abs_rho_minus_delta", "abs_nu_minus_2",
        "rate_n", "rate_b", "tail_mass",
    ]
    units = "n individuals; rho individuals; mu nu theta and rates dimensionless"
    return Table("params", cols, rows, units, {"env": env.describe(), "delta": delta})


def exp_transient_certificate(config: ExperimentConfig, threads: int = 1) -> list:
    """Survival certificate, extinction of both processes, and walk direction."""
    env = config.environment
    cert = certify_survival(env, config.cert_n_grid, config.dp_eps, threads)
    cert_rows = [[r.n, r.theta, r.threshold, r.margin] for r in cert.rows]
    cert_tab = Table(
        "certificate", ["n", "theta", "threshold", "margin"], cert_rows,
        "n individuals; theta threshold margin dimensionless",
        {"env": env.describe(), "all_positive": cert.all_positive},
    )
    ext_rows = []
    for label, e in (("Z+", env), ("Z-", env.reflect())):
        est = extinction_estimate(
            e, 1, config.reps, config.max_gen, config.seed, threads=threads
        )
        ext_rows.append([
            label, 1, est.reps, config.max_gen, est.extinct, est.censored,
            est.fraction, est.half_width,
        ])
    ext_tab = Table(
        "extinction",
        ["process", "z0", "reps", "max_gen", "extinct", "censored", "fraction", "half_width"],
        ext_rows, "counts; fraction and half_width are probabilities",
        {"env": env.describe()},
    )
    batch = simulate(env, config.seed, config.reps, config.horizon, threads=threads)
    d = direction_stats_from(batch)
    walk_tab = Table(
        "walk_direction",
        ["horizon", "reps", "right", "left", "zero", "right_half_width", "left_half_width"],
        [[config.horizon, d.reps, d.right, d.left, d.zero, d.right_half_width, d.left_half_width]],
        "horizon steps; fractions are probabilities",
        {"env": env.describe()},
    )
    return [cert_tab, ext_tab, walk_tab]


def exp_concentration(config: ExperimentConfig, threads: int = 1) -> Table:
    env = config.environment
    tab = concentration_check(
        env, config.conc_n_grid, config.eps_grid, reps=config.conc_reps,
        seed=config.seed, c_test=config.c_test, dp_eps=config.dp_eps, threads=threads,
    )
    rows = [
        [r.n, r.eps, r.tail, r.tail_mass, r.envelope, r.c_max, r.holds, r.method]
        for r in tab.rows
    ]
    cols = ["n", "eps", "tail", "tail_mass", "envelope", "c_max", "holds", "method"]
    return Table(
        "concentration", cols, rows, "n individuals; other columns dimensionless",
        {"env": env.describe(), "c_test": tab.c_test, "c_fit": tab.c_fit},
    )


@dataclass(frozen=True)
class ConsistencyRow:
    env: str
    delta: float
    reps: int
    horizon: int
    max_gen: int
    walk_return: float
    walk_return_half_width: float
    right_first: int
    walk_right_escape: float
    blp_extinct: float
    blp_survival: float
    blp_half_width: float
    blp_censored: int


def walk_blp_row(env, reps, horizon, max_gen, seed, threads=1) -> ConsistencyRow:
    """Walk return/escape frequencies next to FBLP extinction from one individual.

    Both use the same seed and streams, so each FBLP run reads the very coins
    the matching walk reads to the right of the origin.  Censored FBLP runs
    count as survivors.
    """
    batch = simulate(env, seed, reps, horizon, threads=threads)
    returned = int((batch.first_return >= 0).sum())
    escape, right_first = right_escape_fraction(batch)
    est = extinction_estimate(env, 1, reps, max_gen, seed, threads=threads)
    return ConsistencyRow(
        env.describe(), env.total_drift().value, reps, horizon, max_gen,
        returned / reps, binomial_half_width(returned, reps), right_first, escape,
        est.fraction, 1.0 - est.fraction, est.half_width, est.censored,
    )


def exp_walk_blp_consistency(config: ExperimentConfig, threads: int = 1) -> Table:
    rows = []
    for spec in config.consistency_envs:
        r = walk_blp_row(
            parse_inline_env(spec), config.reps, config.horizon, config.max_gen,
            config.seed, threads,
        )
        rows.append(list(asdict(r).values()))
    cols = list(ConsistencyRow.__dataclass_fields__)
    return Table(
        "walk_blp", cols, rows,
        "horizon steps; max_gen generations; frequencies are probabilities",
    )


# ---------------------------------------------------------------------------
# driver


def build_id() -> str:
    """Version plus a digest of the package sources."""
    h = hashlib.sha256()
    for path in sorted(Path(__file__).parent.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return f"cookiewalk {__version__}+{h.hexdigest()[:12]}"


def _tables_for(name, config, threads):
    if name == "params":
        return [exp_params_table(config, threads)]
    if name == "transient-certificate":
        return exp_transient_certificate(config, threads)
    if name == "concentration":
        return [exp_concentration(config, threads)]
    if name == "walk-blp":
        return [exp_walk_blp_consistency(config, threads)]
    raise DomainError(f"unknown experiment {name!r}")


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run_experiment(config: ExperimentConfig, threads: int = 1) -> dict:
    """Run ``config.experiment`` (or all of them), write CSVs and a manifest.

    Returns the manifest, which lists every emitted file with its SHA-256.
    """
    names = EXPERIMENTS[:-1] if config.experiment == "all" else (config.experiment,)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = config.config_hash()
    artifacts = []
    for name in names:
        for table in _tables_for(name, config, threads):
            path = out / f"{table.name}.csv"
            path.write_text(table.to_csv(name, chash))
            artifacts.append({"experiment": name, "path": path.name, "sha256": sha256_file(path)})
    manifest = {
        "build": build_id(),
        "config_hash": chash,
        "config": {k: v for k, v in asdict(config).items() if k != "out_dir"},
        "artifacts": artifacts,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def run_all(config: ExperimentConfig, threads: int = 1) -> dict:
    return run_experiment(_with(config, experiment="all"), threads)


def _with(config, **changes):
    body = asdict(config)
    body.update(changes)
    return ExperimentConfig(**body)


def verify_manifest(out_dir) -> list:
    """Files whose checksum no longer matches the manifest."""
    out = Path(out_dir)
    manifest = json.loads((out / "manifest.json").read_text())
    return [a["path"] for a in manifest["artifacts"] if sha256_file(out / a["path"]) != a["sha256"]]
