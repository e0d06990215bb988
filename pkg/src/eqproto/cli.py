"""Experiment harness and command-line front end.

Subcommands: ``run`` (Monte Carlo error estimation), ``sweep`` (cost
measurements over a parameter grid, with optional scaling-law fits),
``congest`` (triangle enumeration on a message-capped network),
``verify-lemmas`` (entropy-inequality trials in exact arithmetic), and
``regress`` (byte-identical replay against golden CSV files).

Exit codes: 0 success, 1 assertion/verification failure, 2 usage error.

CSV schema (version 1): every result file starts with the line
``# csv-schema 1`` followed by a header row with the fixed columns
run_id, protocol, k, r, E, coord_bits, seed, bits_total, rounds_merged,
rounds_raw, failures, trials, notes.  Identical config + seed reproduces
the file byte for byte.

Config files are flat JSON objects whose keys mirror ExperimentConfig
fields; command-line flags override file values.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import math
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np
from scipy.stats import beta as _beta_dist

from .congest import CongestNetwork, enumerate_triangles, gnp, load_edge_list
from .core import (
    Direction,
    SharedCoins,
    TallyTranscript,
    derive_seed,
    make_instance,
)
from .entropy_checks import run_kl_lemma_trials, run_support_lemma_trials
from .protocols_advanced import (
    FaultPlan,
    adaptive_equality_testing,
    rewind_equality_testing,
)
from .protocols_basic import (
    PhaseSchedule,
    dimension_reduce,
    exists_equal,
    simple_equality_testing,
)
from .reductions import setint_via_eq

CSV_SCHEMA_VERSION = 1
CSV_COLUMNS = (
    "run_id",
    "protocol",
    "k",
    "r",
    "E",
    "coord_bits",
    "seed",
    "bits_total",
    "rounds_merged",
    "rounds_raw",
    "failures",
    "trials",
    "notes",
)
PROTOCOLS = (
    "dimreduce",
    "simple-et",
    "exists-eq",
    "rewind-et",
    "adaptive-et",
    "setint",
)

# cost models for fit_scaling; L below stands for max(1, log2 r)
MODELS = ("budget-root", "phases-budget-root", "adaptive-log")


# ---------------------------------------------------------------------------
# error estimation


def clopper_pearson(failures: int, trials: int, confidence: float = 0.99):
    """Exact (Clopper-Pearson) two-sided binomial confidence interval."""
    if trials < 1 or not 0 <= failures <= trials:
        raise ValueError("need 0 <= failures <= trials, trials >= 1")
    if not 0 < confidence < 1:
        raise ValueError("confidence must be in (0, 1)")
    tail = (1.0 - confidence) / 2.0
    if failures == 0:
        lo = 0.0
    else:
        lo = float(_beta_dist.ppf(tail, failures, trials - failures + 1))
    if failures == trials:
        hi = 1.0
    else:
        hi = float(_beta_dist.ppf(1.0 - tail, failures + 1, trials - failures))
    return lo, hi


@dataclass(frozen=True)
class ErrorEstimate:
    trials: int
    failures: int
    estimate: float
    ci_low: float
    ci_high: float
    confidence: float = 0.99

    def __post_init__(self):
        if not 0 <= self.failures <= self.trials:
            raise ValueError("failures must lie in [0, trials]")
        if not self.ci_low <= self.estimate <= self.ci_high:
            raise ValueError("interval must contain the point estimate")

    @classmethod
    def from_counts(
        cls, failures: int, trials: int, confidence: float = 0.99
    ) -> "ErrorEstimate":
        lo, hi = clopper_pearson(failures, trials, confidence)
        return cls(trials, failures, failures / trials, lo, hi, confidence)


# ---------------------------------------------------------------------------
# experiment configuration


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: a protocol, its parameters, and trial plumbing.

    `equal_count` is the number of planted equal coordinates (for setint,
    the intersection size); None means the protocol default (0 planted for
    error runs; a random overlap for setint).  `c` is the rewind budget
    multiplier; `instance_pool` bounds how many distinct random inputs are
    cycled through across trials.
    """

    protocol: str
    k: int
    E: int
    r: int = 1
    coord_bits: int = 32
    trials: int = 1
    seed: int = 0
    equal_count: int | None = None
    c: int = 2
    fault_plan: FaultPlan | None = None
    instance_pool: int = 64

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if self.k < 1 or self.E < 1 or self.r < 1:
            raise ValueError("k, E, r must be positive")
        if not 1 <= self.coord_bits <= 64:
            raise ValueError("coord_bits must be in 1..64")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.instance_pool < 1:
            raise ValueError("instance_pool must be >= 1")
        if self.c < 2:
            raise ValueError("c must be >= 2")
        if self.equal_count is not None and not 0 <= self.equal_count <= self.k:
            raise ValueError("equal_count must lie in [0, k]")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        plan = data.get("fault_plan")
        if isinstance(plan, dict):
            data["fault_plan"] = FaultPlan.from_json(json.dumps(plan))
        return cls(**data)


# ---------------------------------------------------------------------------
# per-trial execution


def _planted(cfg: ExperimentConfig) -> int:
    return 0 if cfg.equal_count is None else cfg.equal_count


def _instance_pool(cfg: ExperimentConfig) -> list:
    """Random inputs reused cyclically across trials (failure probability is
    over the protocol's coins, so a bounded pool of inputs suffices)."""
    size = min(cfg.instance_pool, cfg.trials)
    if cfg.protocol == "setint":
        pool = []
        for i in range(size):
            rng = np.random.Generator(
                np.random.Philox(key=derive_seed(cfg.seed, 0x5345, i))
            )
            pool.append(
                _random_set_pair(rng, cfg.k, cfg.coord_bits, cfg.equal_count)
            )
        return pool
    equal_set = frozenset(range(_planted(cfg)))
    return [
        make_instance(
            cfg.k, cfg.coord_bits, equal_set, derive_seed(cfg.seed, 0x494E, i)
        )
        for i in range(size)
    ]


def _random_set_pair(rng, k: int, universe_bits: int, overlap: int | None):
    """Two k-element sets sharing `overlap` elements (random if None)."""
    hi = 1 << universe_bits
    if 2 * k > hi:
        raise ValueError("universe too small for two k-element sets")
    if overlap is None:
        overlap = int(rng.integers(0, k + 1))
    chosen: list[int] = []
    seen: set[int] = set()
    while len(chosen) < 2 * k - overlap:
        for v in rng.integers(0, hi, size=2 * k, dtype=np.uint64):
            v = int(v)
            if v not in seen:
                seen.add(v)
                chosen.append(v)
                if len(chosen) == 2 * k - overlap:
                    break
    shared = chosen[:overlap]
    a_only = chosen[overlap:k]
    b_only = chosen[k:]
    return frozenset(shared + a_only), frozenset(shared + b_only)


def _inner_equality(r: int, E: int):
    """Per-coordinate equality protocol in the shape setint_via_eq expects."""

    def inner(instance, transcript, coins, lead):
        return simple_equality_testing(
            instance, r, E, transcript=transcript, coins=coins, lead=lead
        )

    return inner


def run_trial(cfg: ExperimentConfig, pool_entry, transcript, coins):
    """One protocol execution; returns (failure, survivors_or_None).

    A failure is any verdict that mismatches the planted ground truth, or a
    budget-exhaustion / protocol-failure outcome.
    """
    p = cfg.protocol
    if p == "setint":
        A, B = pool_entry
        res = setint_via_eq(
            A,
            B,
            _inner_equality(cfg.r, cfg.E),
            p_err=2.0 ** -cfg.E,
            transcript=transcript,
            coins=coins,
            universe_bits=cfg.coord_bits,
        )
        return res.intersection != (A & B), None
    inst = pool_entry

    def mask_wrong(mask) -> bool:
        if not inst.equal_set:
            return bool(mask.any())
        return not np.array_equal(mask, inst.equal_mask())

    if p == "simple-et":
        res = simple_equality_testing(
            inst, cfg.r, cfg.E, transcript=transcript, coins=coins
        )
        return mask_wrong(res.equal_mask), int(res.equal_mask.sum())
    if p == "exists-eq":
        res = exists_equal(inst, cfg.r, cfg.E, transcript=transcript, coins=coins)
        return res.answer != bool(inst.equal_set), None
    if p == "rewind-et":
        res = rewind_equality_testing(
            inst,
            cfg.r,
            cfg.E,
            fault_plan=cfg.fault_plan,
            transcript=transcript,
            coins=coins,
            c=cfg.c,
        )
        if res.outcome != "ok":
            return True, None
        return mask_wrong(res.equal_mask), res.phases_executed
    if p == "adaptive-et":
        res = adaptive_equality_testing(
            inst, cfg.r, cfg.E, transcript=transcript, coins=coins
        )
        if res.outcome != "ok":
            return True, None
        return mask_wrong(res.equal_mask), int(res.equal_mask.sum())
    if p == "dimreduce":
        res = dimension_reduce(inst, cfg.E, "testing", transcript, coins)
        active = set(int(i) for i in res.active)
        missed = any(i not in active for i in inst.equal_set)
        spurious = len(active - set(inst.equal_set))
        return missed or spurious > cfg.E, len(active)
    raise ValueError(f"unknown protocol {p!r}")


def trial_coins(seed: int, trial_index: int) -> SharedCoins:
    """Independent coins per trial, derived from (seed, trial_index)."""
    return SharedCoins(derive_seed(seed, 0x5452, trial_index))


class _SilentTally:
    """Transcript stub tracking only total bits (hot Monte Carlo loops)."""

    wants_payloads = False
    __slots__ = ("total_bits",)

    def __init__(self):
        self.total_bits = 0

    def record(self, direction, phase_tag, payload) -> None:
        self.total_bits += len(payload)

    def record_len(self, direction, phase_tag, nbits: int) -> None:
        self.total_bits += nbits


# ---------------------------------------------------------------------------
# harness operations


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".10g")
    return str(value)


def _row(run_id, cfg, bits_total, merged, raw, failures, trials, notes):
    return {
        "run_id": str(run_id),
        "protocol": cfg.protocol,
        "k": str(cfg.k),
        "r": str(cfg.r),
        "E": str(cfg.E),
        "coord_bits": str(cfg.coord_bits),
        "seed": str(cfg.seed),
        "bits_total": _fmt(bits_total),
        "rounds_merged": str(merged),
        "rounds_raw": str(raw),
        "failures": str(failures),
        "trials": str(trials),
        "notes": notes,
    }


def monte_carlo_error(cfg: ExperimentConfig):
    """Estimate the failure probability over cfg.trials independent trials.

    Trial t uses coins seeded from (seed, t); results are accumulated in
    trial order, so the outcome is independent of any scheduling.  Returns
    (ErrorEstimate, CSV rows).
    """
    pool = _instance_pool(cfg)
    failures = 0
    first = TallyTranscript()
    coins = SharedCoins(0)
    fail, _ = run_trial(cfg, pool[0], first, coins.reseed(derive_seed(cfg.seed, 0x5452, 0)))
    failures += fail
    for t in range(1, cfg.trials):
        fail, _ = run_trial(
            cfg,
            pool[t % len(pool)],
            _SilentTally(),
            coins.reseed(derive_seed(cfg.seed, 0x5452, t)),
        )
        failures += fail
    first_ledger = first.ledger()
    est = ErrorEstimate.from_counts(failures, cfg.trials)
    notes = (
        f"estimate={_fmt(est.estimate)}"
        f";ci99={_fmt(est.ci_low)}..{_fmt(est.ci_high)}"
    )
    row = _row(
        0,
        cfg,
        first_ledger.bits_total,
        first_ledger.rounds_merged,
        first_ledger.rounds_raw,
        failures,
        cfg.trials,
        notes,
    )
    return est, [row]


def schedule_volume(protocol: str, k: int, r: int, E: int) -> int | None:
    """Deterministic test-bit volume implied by the protocol's schedule."""
    if protocol == "simple-et":
        return PhaseSchedule.simple(min(k, E), r, E).test_bit_volume
    if protocol == "exists-eq":
        return k * PhaseSchedule.exists_equal(k, r, E).tests[0]
    return None


def cost_sweep(base: ExperimentConfig, grid: dict) -> list:
    """Measure communication cost over a (k, r, E) grid.

    Grid keys must be among k/r/E and map to value lists; points are
    visited in product order.  Sweeps default to all-equal inputs (the
    full schedule runs; nothing is refuted early) unless the base config
    sets equal_count.  Each row carries measured bits and rounds plus, in
    notes, the schedule volume (when defined) and survivor mean/sd.
    """
    bad = set(grid) - {"k", "r", "E"}
    if bad:
        raise ValueError(f"grid keys must be k/r/E, got {sorted(bad)}")
    keys = [key for key in ("k", "r", "E") if key in grid]
    rows = []
    run_id = 0
    for combo in itertools.product(*(grid[key] for key in keys)):
        cfg = replace(base, **dict(zip(keys, combo)))
        if cfg.equal_count is None and cfg.protocol != "setint":
            cfg = replace(cfg, equal_count=cfg.k)
        pool = _instance_pool(cfg)
        bits, merged_l, raw_l, surv, failures = [], [], [], [], 0
        for t in range(cfg.trials):
            transcript = TallyTranscript()
            fail, survivors = run_trial(
                cfg, pool[t % len(pool)], transcript, trial_coins(cfg.seed, t)
            )
            failures += fail
            led = transcript.ledger()
            bits.append(led.bits_total)
            merged_l.append(led.rounds_merged)
            raw_l.append(led.rounds_raw)
            if survivors is not None:
                surv.append(survivors)
        bits_cell = bits[0] if len(set(bits)) == 1 else sum(bits) / len(bits)
        notes = []
        vol = schedule_volume(cfg.protocol, cfg.k, cfg.r, cfg.E)
        if vol is not None:
            notes.append(f"volume={vol}")
        if surv:
            mean = sum(surv) / len(surv)
            sd = math.sqrt(sum((s - mean) ** 2 for s in surv) / len(surv))
            notes.append(f"survivors={_fmt(mean)}/{_fmt(sd)}")
        rows.append(
            _row(
                run_id,
                cfg,
                bits_cell,
                max(merged_l),
                max(raw_l),
                failures,
                cfg.trials,
                ";".join(notes),
            )
        )
        run_id += 1
    return rows


@dataclass(frozen=True)
class FitResult:
    model: str
    scale: float
    max_rel_residual: float
    singular: bool


def model_value(model: str, k: int, r: int, E: int) -> float:
    """Predicted cost shape (up to the fitted constant) for each model."""
    root = E * k ** (1.0 / r)
    if model == "budget-root":
        return root
    if model == "phases-budget-root":
        return r * root
    if model == "adaptive-log":
        log_r = max(1.0, math.log2(r))
        return k + root * log_r + E * r * log_r
    raise ValueError(f"unknown model {model!r}")


def fit_scaling(points, model: str) -> FitResult:
    """Least-squares fit of measured bits to `model`; see MODELS.

    `points` is an iterable of mappings with keys k, r, E, bits_total.
    Reports the max relative residual |y - a*f| / (a*f); a degenerate
    (non-positive or non-finite) fit is flagged singular.
    """
    pts = list(points)
    if len(pts) < 4:
        raise ValueError("need at least 4 grid points to fit")
    f = np.array(
        [
            model_value(model, int(p["k"]), int(p["r"]), int(p["E"]))
            for p in pts
        ]
    )
    y = np.array([float(p["bits_total"]) for p in pts])
    denom = float(f @ f)
    if not math.isfinite(denom) or denom <= 0:
        return FitResult(model, 0.0, math.inf, True)
    a = float(f @ y) / denom
    if not math.isfinite(a) or a <= 0:
        return FitResult(model, a, math.inf, True)
    resid = float(np.max(np.abs(y - a * f) / (a * f)))
    return FitResult(model, a, resid, False)


# ---------------------------------------------------------------------------
# CSV plumbing


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    buf.write(f"# csv-schema {CSV_SCHEMA_VERSION}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([row[c] for c in CSV_COLUMNS])
    return buf.getvalue()


def csv_to_rows(text: str) -> list:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# csv-schema "):
        raise ValueError("missing csv-schema header")
    version = int(lines[0].split()[-1])
    if version != CSV_SCHEMA_VERSION:
        raise ValueError(f"unsupported csv-schema version {version}")
    reader = csv.DictReader(io.StringIO("\n".join(lines[1:])))
    rows = list(reader)
    for row in rows:
        if set(row) != set(CSV_COLUMNS):
            raise ValueError("csv columns do not match the schema")
    return rows


# ---------------------------------------------------------------------------
# golden-file regression

DEFAULT_GOLDEN_CASES = (
    {
        "name": "run-simple-et",
        "command": "run",
        "config": {
            "protocol": "simple-et",
            "k": 8,
            "r": 2,
            "E": 8,
            "coord_bits": 16,
            "trials": 200,
            "seed": 7,
        },
    },
    {
        "name": "run-exists-eq",
        "command": "run",
        "config": {
            "protocol": "exists-eq",
            "k": 16,
            "r": 2,
            "E": 12,
            "trials": 200,
            "seed": 3,
            "equal_count": 1,
        },
    },
    {
        "name": "run-rewind-et",
        "command": "run",
        "config": {
            "protocol": "rewind-et",
            "k": 8,
            "r": 1,
            "E": 10,
            "trials": 100,
            "seed": 5,
        },
    },
    {
        "name": "run-setint",
        "command": "run",
        "config": {
            "protocol": "setint",
            "k": 8,
            "r": 2,
            "E": 12,
            "coord_bits": 16,
            "trials": 50,
            "seed": 11,
        },
    },
    {
        "name": "sweep-simple-et",
        "command": "sweep",
        "config": {"protocol": "simple-et", "k": 64, "r": 1, "E": 32, "seed": 1},
        "grid": {"r": [1, 2, 4]},
    },
)


def _case_rows(case: dict) -> list:
    cfg = ExperimentConfig.from_dict(case["config"])
    if case["command"] == "run":
        _, rows = monte_carlo_error(cfg)
        return rows
    if case["command"] == "sweep":
        return cost_sweep(cfg, case.get("grid", {}))
    raise ValueError(f"unknown golden command {case['command']!r}")


def write_goldens(golden_dir, cases=DEFAULT_GOLDEN_CASES) -> None:
    golden_dir = Path(golden_dir)
    golden_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"version": 1, "cases": list(cases)}
    (golden_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )
    for case in cases:
        (golden_dir / f"{case['name']}.csv").write_text(
            rows_to_csv(_case_rows(case))
        )


def run_regression(golden_dir) -> list:
    """Replay every manifest case; returns [(name, matched)] pairs."""
    golden_dir = Path(golden_dir)
    manifest = json.loads((golden_dir / "manifest.json").read_text())
    results = []
    for case in manifest["cases"]:
        expected = (golden_dir / f"{case['name']}.csv").read_text()
        results.append((case["name"], rows_to_csv(_case_rows(case)) == expected))
    return results


# ---------------------------------------------------------------------------
# CLI


def _int_list(text: str) -> list:
    return [int(part) for part in text.split(",") if part]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eqproto",
        description="Protocol experiment harness (Monte Carlo error "
        "estimation, cost sweeps, scaling fits, network simulation, "
        "entropy-lemma verification, golden-file regression).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, multi: bool):
        kind = _int_list if multi else int
        p.add_argument("--protocol", choices=PROTOCOLS)
        p.add_argument("--k", type=kind)
        p.add_argument("--r", type=kind)
        p.add_argument("--E", type=kind)
        p.add_argument("--coord-bits", type=int, dest="coord_bits")
        p.add_argument("--trials", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=str)
        p.add_argument("--config", type=str, help="flat JSON config file")
        p.add_argument(
            "--fault-plan", type=str, dest="fault_plan", help="JSON fault plan"
        )

    run_p = sub.add_parser("run", help="Monte Carlo failure-rate estimation")
    add_common(run_p, multi=False)

    sweep_p = sub.add_parser(
        "sweep", help="cost measurement over a k/r/E grid (comma lists)"
    )
    add_common(sweep_p, multi=True)
    sweep_p.add_argument(
        "--fit", choices=MODELS, help="also fit the named scaling model"
    )

    congest_p = sub.add_parser(
        "congest", help="triangle enumeration on a message-capped network"
    )
    congest_p.add_argument("--n", type=int, required=True)
    congest_p.add_argument("--p", type=float, help="random-graph edge density")
    congest_p.add_argument("--edges", type=str, help="edge-list file")
    congest_p.add_argument("--seed", type=int, default=0)
    congest_p.add_argument("--c-msg", type=int, dest="c_msg", default=1)
    congest_p.add_argument("--out", type=str)

    lemmas_p = sub.add_parser(
        "verify-lemmas", help="entropy-inequality trials in exact arithmetic"
    )
    lemmas_p.add_argument("--trials", type=int, default=10000)
    lemmas_p.add_argument("--seed", type=int, default=0)

    regress_p = sub.add_parser(
        "regress", help="byte-identical replay against golden CSV files"
    )
    regress_p.add_argument("--golden", type=str, default="golden")
    regress_p.add_argument(
        "--write", action="store_true", help="(re)generate the golden files"
    )
    return parser


_CLI_FIELDS = (
    "protocol",
    "k",
    "r",
    "E",
    "coord_bits",
    "trials",
    "seed",
    "fault_plan",
)


def _config_from_args(args, multi: bool):
    """Merge --config JSON with explicit flags (flags win).

    With multi=True the k/r/E flags accept comma lists; returns
    (ExperimentConfig with scalar k/r/E, grid dict of the list-valued ones).
    """
    data: dict = {}
    if args.config:
        loaded = json.loads(Path(args.config).read_text())
        if not isinstance(loaded, dict):
            raise ValueError("config file must hold a flat JSON object")
        data.update(loaded)
    for name in _CLI_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            data[name] = value
    if isinstance(data.get("fault_plan"), str):
        data["fault_plan"] = json.loads(Path(data["fault_plan"]).read_text())
    if "protocol" not in data:
        raise ValueError("--protocol is required (flag or config file)")
    for name in ("k", "E"):
        if name not in data:
            raise ValueError(f"--{name} is required (flag or config file)")
    grid = {}
    if multi:
        for name in ("k", "r", "E"):
            value = data.get(name)
            if isinstance(value, list):
                grid[name] = value
                data[name] = value[0]
    return ExperimentConfig.from_dict(data), grid


def _cmd_run(args) -> int:
    cfg, _ = _config_from_args(args, multi=False)
    est, rows = monte_carlo_error(cfg)
    out = args.out or (
        f"run-{cfg.protocol}-k{cfg.k}-r{cfg.r}-E{cfg.E}-s{cfg.seed}.csv"
    )
    Path(out).write_text(rows_to_csv(rows))
    print(
        f"{cfg.protocol}: {est.failures}/{est.trials} failures, "
        f"estimate {_fmt(est.estimate)}, "
        f"99% CI [{_fmt(est.ci_low)}, {_fmt(est.ci_high)}] -> {out}"
    )
    return 0


def _cmd_sweep(args) -> int:
    cfg, grid = _config_from_args(args, multi=True)
    rows = cost_sweep(cfg, grid)
    out = args.out or f"sweep-{cfg.protocol}-s{cfg.seed}.csv"
    Path(out).write_text(rows_to_csv(rows))
    print(f"{len(rows)} grid points -> {out}")
    if args.fit:
        fit = fit_scaling(rows, args.fit)
        status = "singular" if fit.singular else "ok"
        print(
            f"fit {fit.model}: scale={_fmt(fit.scale)} "
            f"max_rel_residual={_fmt(fit.max_rel_residual)} ({status})"
        )
    return 0


def _cmd_congest(args) -> int:
    if (args.p is None) == (args.edges is None):
        raise ValueError("give exactly one of --p or --edges")
    if args.edges:
        edges = load_edge_list(Path(args.edges).read_text().splitlines())
    else:
        edges = gnp(args.n, args.p, args.seed)
    network = CongestNetwork(args.n, edges, c_msg=args.c_msg)
    result = enumerate_triangles(network, seed=args.seed)
    out = args.out or f"congest-n{args.n}-s{args.seed}.csv"
    lines = ["a,b,c"]
    lines += [f"{a},{b},{c}" for a, b, c in sorted(result.triangles)]
    Path(out).write_text("\n".join(lines) + "\n")
    stats = {
        "n": args.n,
        "edges": len(network.edges),
        "max_degree": network.delta,
        "message_cap": network.B,
        "rounds": result.rounds,
        "triangles": len(result.triangles),
        "exhausted": result.exhausted,
        "phases": result.phase_stats,
    }
    stats_path = Path(out).with_suffix(".stats.json")
    stats_path.write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    print(
        f"{len(result.triangles)} triangles in {result.rounds} rounds "
        f"-> {out}, {stats_path}"
    )
    return 1 if result.exhausted else 0


def _cmd_verify_lemmas(args) -> int:
    checks = (
        (
            "conditioning-entropy-bound",
            run_support_lemma_trials(args.trials, args.seed),
        ),
        (
            "log-ratio-tail-bound",
            run_kl_lemma_trials(args.trials, derive_seed(args.seed, 1)),
        ),
    )
    print(f"{'inequality':<28}{'trials':>8}{'violations':>12}  status")
    bad = 0
    for name, violations in checks:
        status = "PASS" if violations == 0 else "FAIL"
        bad += violations
        print(f"{name:<28}{args.trials:>8}{violations:>12}  {status}")
    return 0 if bad == 0 else 1


def _cmd_regress(args) -> int:
    if args.write:
        write_goldens(args.golden)
        print(f"golden files written to {args.golden}")
        return 0
    results = run_regression(args.golden)
    failed = [name for name, ok in results if not ok]
    for name, ok in results:
        print(f"{name}: {'match' if ok else 'MISMATCH'}")
    return 0 if not failed else 1


_COMMANDS = {
    "run": _cmd_run,
    "sweep": _cmd_sweep,
    "congest": _cmd_congest,
    "verify-lemmas": _cmd_verify_lemmas,
    "regress": _cmd_regress,
}


def cli_dispatch(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, KeyError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()
