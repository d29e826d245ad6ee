"""Experiment runner: paired-variant forest fits, MSE records, ratio tables.

Every (cell, replication) task derives its seed from the master seed and the
cell key, generates train/test data once, estimates nuisances once, and fits
every requested variant on the same data, so variant comparisons are paired
by construction. Cox cells draw Weibull data (the misspecification check)
and therefore share datasets with the matching Weibull cells.

results.csv is byte-deterministic for a fixed master seed regardless of the
worker count; wall-clock timings go to a separate timings.csv.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field, replace
from multiprocessing import get_context

import numpy as np

from .data import (
    GAO,
    GAO_W,
    NAIVE,
    ROBINSON,
    ROBINSON_W,
    VARIANTS,
    Dataset,
)
from .dgp import (
    BINOMIAL,
    MULTINOMIAL4,
    NORMAL,
    OUTCOME_FAMILIES,
    SETUPS,
    WEIBULL,
    DgpSpec,
    sample,
)
from .errors import ValidationError
from .families import family_for
from .forest import ForestConfig, fit_forest, predict_effects
from .nuisance import BoostConfig, build_design, estimate_profile
from .tree import TreeConfig

log = logging.getLogger(__name__)

# config family labels: the outcome families plus the Cox-on-Weibull check
FAMILY_LABELS = OUTCOME_FAMILIES + ("cox",)
GAO_SUPPORTED = {NORMAL, BINOMIAL, "cox"}

DEFAULT_PAIRS = (
    (ROBINSON, NAIVE),
    (ROBINSON_W, NAIVE),
    (ROBINSON, ROBINSON_W),
    (GAO, ROBINSON),
    (GAO_W, ROBINSON_W),
)


@dataclass(frozen=True)
class ExperimentCell:
    setup: str
    family: str  # label; "cox" means Weibull data fitted with a Cox model
    n: int
    p: int

    def __post_init__(self):
        if self.setup not in SETUPS:
            raise ValidationError(f"unknown setup {self.setup!r}")
        if self.family not in FAMILY_LABELS:
            raise ValidationError(f"unknown family label {self.family!r}")

    @property
    def dgp_family(self) -> str:
        return WEIBULL if self.family == "cox" else self.family

    @property
    def fit_family(self) -> str:
        return {
            NORMAL: "linear_gaussian",
            BINOMIAL: "binomial_logit",
            MULTINOMIAL4: "proportional_odds",
            WEIBULL: "weibull_ph",
            "cox": "cox_partial",
        }[self.family]


@dataclass
class ExperimentConfig:
    cells: list
    variants: list
    replications: int = 10
    test_size: int = 1000
    forest: ForestConfig = field(default_factory=lambda: ForestConfig(n_trees=100))
    propensity: dict = field(default_factory=dict)
    boost: BoostConfig = field(default_factory=BoostConfig)
    master_seed: int = 20260808
    workers: int = 1
    gaussian_direct_m: bool = False
    output_dir: str | None = None

    def __post_init__(self):
        if self.replications < 1:
            raise ValidationError("replications must be at least 1")
        if self.test_size < 1:
            raise ValidationError("test_size must be at least 1")
        for v in self.variants:
            if v not in VARIANTS:
                raise ValidationError(f"unknown variant {v!r}")
        if len(set(self.variants)) != len(self.variants):
            raise ValidationError("duplicate variants in config")
        for cell in self.cells:
            if any(v in (GAO, GAO_W) for v in self.variants) and cell.family not in GAO_SUPPORTED:
                raise ValidationError(
                    f"variance-weighted centering is undefined for family {cell.family!r}"
                )


@dataclass
class ResultRecord:
    setup: str
    family: str
    fit_family: str
    n: int
    p: int
    variant: str
    replication: int
    seed: int
    mse: float
    wall_time_ms: float
    n_capped: int
    n_fallback: int
    dataset_hash: str


def derive_seed(master: int, setup: str, dgp_family: str, n: int, p: int,
                replication: int) -> int:
    """Stable 63-bit task seed from the master seed and the cell key."""
    key = f"{master}|{setup}|{dgp_family}|{n}|{p}|{replication}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big") >> 1


def _hash_datasets(train: Dataset, test: Dataset) -> str:
    h = hashlib.sha256()
    for part in train.outcome_hash_payload() + test.outcome_hash_payload():
        h.update(part)
    return h.hexdigest()[:16]


def _variant_needs(variants) -> tuple[bool, bool, bool]:
    any_nuisance = any(v != NAIVE for v in variants)
    need_offsets = any(v in (ROBINSON, GAO) for v in variants)
    need_gao = any(v in (GAO, GAO_W) for v in variants)
    return any_nuisance, need_offsets, need_gao


def run_replication(cfg: ExperimentConfig, cell: ExperimentCell,
                    replication: int) -> list[ResultRecord]:
    """All variants for one (cell, replication); shared data and nuisances."""
    seed = derive_seed(cfg.master_seed, cell.setup, cell.dgp_family, cell.n,
                       cell.p, replication)
    ss = np.random.SeedSequence(seed)
    train_seed, test_seed, nuis_seed, forest_seed = (
        int(s.generate_state(1, np.uint64)[0]) >> 1 for s in ss.spawn(4)
    )
    train, _ = sample(DgpSpec(cell.setup, cell.dgp_family, n=cell.n, p=cell.p,
                              seed=train_seed))
    test, truth = sample(DgpSpec(cell.setup, cell.dgp_family, n=cfg.test_size,
                                 p=cell.p, seed=test_seed))
    ds_hash = _hash_datasets(train, test)
    family = family_for(cell.fit_family, n_levels=train.n_levels)

    any_nuisance, _, need_gao = _variant_needs(cfg.variants)
    profile = None
    if any_nuisance:
        profile = estimate_profile(
            train, family,
            need_gao=need_gao,
            propensity_kwargs=dict(cfg.propensity),
            boost_cfg=cfg.boost,
            gaussian_direct_m=cfg.gaussian_direct_m,
            seed=nuis_seed,
        )

    records = []
    for variant in cfg.variants:
        t0 = time.perf_counter()
        design = build_design(variant, profile, train)
        forest_cfg = replace(cfg.forest, rng_seed=forest_seed)
        forest = fit_forest(train, family, design, forest_cfg)
        _, tau_hat, n_fb = predict_effects(forest, test.x)
        mse = float(np.mean((tau_hat - truth.tau) ** 2))
        if not np.isfinite(mse) or mse < 0:
            raise ValidationError(f"non-finite MSE for variant {variant!r}")
        records.append(
            ResultRecord(
                setup=cell.setup, family=cell.family, fit_family=cell.fit_family,
                n=cell.n, p=cell.p, variant=variant, replication=replication,
                seed=seed, mse=mse,
                wall_time_ms=1000.0 * (time.perf_counter() - t0),
                n_capped=forest.n_capped,
                n_fallback=forest.n_fallback_leaves + n_fb,
                dataset_hash=ds_hash,
            )
        )
    return records


def _run_task(args):
    cfg, cell, replication = args
    try:
        return run_replication(cfg, cell, replication), None
    except Exception as exc:  # recorded, run continues
        return [], (cell, replication, f"{type(exc).__name__}: {exc}")


def run_experiment(cfg: ExperimentConfig):
    """Execute the full cell x replication grid.

    Returns (records, failures); output ordering is canonical and
    independent of the worker count.
    """
    tasks = [
        (cfg, cell, rep)
        for cell in cfg.cells
        for rep in range(cfg.replications)
    ]
    if cfg.workers > 1:
        with get_context("fork").Pool(cfg.workers) as pool:
            outcomes = pool.map(_run_task, tasks)
    else:
        outcomes = [_run_task(t) for t in tasks]
    records, failures = [], []
    for recs, failure in outcomes:
        records.extend(recs)
        if failure is not None:
            failures.append(failure)
            log.error("cell %s replication %d failed: %s", failure[0], failure[1], failure[2])
    records.sort(key=lambda r: (r.setup, r.family, r.n, r.p, r.variant, r.replication))
    return records, failures


def _fmt(v: float) -> str:
    return format(v, ".17g")


RESULT_COLUMNS = (
    "setup", "family", "fit_family", "n", "p", "variant", "replication",
    "seed", "mse", "n_capped", "n_fallback", "dataset_hash",
)


def write_results_csv(records, path) -> None:
    """Deterministic per-replication results (timings live in timings.csv)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for r in records:
            writer.writerow([
                r.setup, r.family, r.fit_family, r.n, r.p, r.variant,
                r.replication, r.seed, _fmt(r.mse), r.n_capped, r.n_fallback,
                r.dataset_hash,
            ])


def write_timings_csv(records, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["setup", "family", "n", "p", "variant", "replication", "wall_time_ms"])
        for r in records:
            writer.writerow([r.setup, r.family, r.n, r.p, r.variant,
                             r.replication, f"{r.wall_time_ms:.3f}"])


def _cell_key(r: ResultRecord):
    return (r.setup, r.family, r.n, r.p)


def summarize(records, pairs=None):
    """Geometric-mean paired MSE ratios per cell, plus raw MSE quantiles.

    Pairs are (numerator_variant, denominator_variant); same-seed records
    are matched by replication. Cells missing a pair member yield an NA row.
    Cross-family rows compare the Cox fit against the Weibull fit on shared
    data for each variant present in both.
    """
    pairs = list(pairs) if pairs is not None else list(DEFAULT_PAIRS)
    by_cell: dict = {}
    for r in records:
        by_cell.setdefault(_cell_key(r), {}).setdefault(r.variant, {})[r.replication] = r

    ratio_rows = []
    variant_order = {v: i for i, v in enumerate(VARIANTS)}
    present = sorted({r.variant for r in records}, key=variant_order.get)
    for key in sorted(by_cell):
        setup, family, n, p = key
        cell = by_cell[key]
        for num, den in pairs:
            if num not in present and den not in present:
                continue
            row = {
                "setup": setup, "family": family, "n": n, "p": p,
                "comparison": f"{num}/{den}", "ratio": "NA", "n_pairs": 0,
            }
            if num in cell and den in cell:
                shared = sorted(set(cell[num]) & set(cell[den]))
                logs = [
                    np.log(cell[num][rep].mse / cell[den][rep].mse)
                    for rep in shared
                    if cell[den][rep].mse > 0
                ]
                if logs:
                    row["ratio"] = _fmt(float(np.exp(np.mean(logs))))
                    row["n_pairs"] = len(logs)
            ratio_rows.append(row)

    # Cox-on-Weibull robustness: same setup/n/p, cox vs weibull label
    for key in sorted(by_cell):
        setup, family, n, p = key
        if family != "cox":
            continue
        wkey = (setup, WEIBULL, n, p)
        if wkey not in by_cell:
            continue
        for variant in present:
            cox_cell = by_cell[key].get(variant, {})
            weib_cell = by_cell[wkey].get(variant, {})
            shared = sorted(set(cox_cell) & set(weib_cell))
            logs = [
                np.log(cox_cell[rep].mse / weib_cell[rep].mse)
                for rep in shared
                if weib_cell[rep].mse > 0
                and cox_cell[rep].dataset_hash == weib_cell[rep].dataset_hash
            ]
            if logs:
                ratio_rows.append({
                    "setup": setup, "family": WEIBULL, "n": n, "p": p,
                    "comparison": f"cox/weibull@{variant}",
                    "ratio": _fmt(float(np.exp(np.mean(logs)))),
                    "n_pairs": len(logs),
                })

    quant_rows = []
    for key in sorted(by_cell):
        setup, family, n, p = key
        for variant in present:
            if variant not in by_cell[key]:
                continue
            mses = np.array([r.mse for r in by_cell[key][variant].values()])
            qs = np.quantile(mses, [0.0, 0.25, 0.5, 0.75, 1.0])
            quant_rows.append({
                "setup": setup, "family": family, "n": n, "p": p,
                "variant": variant, "n_reps": mses.size,
                "min": _fmt(qs[0]), "q25": _fmt(qs[1]), "median": _fmt(qs[2]),
                "q75": _fmt(qs[3]), "max": _fmt(qs[4]),
            })
    return ratio_rows, quant_rows


def write_ratios_csv(ratio_rows, path) -> None:
    cols = ["setup", "family", "n", "p", "comparison", "ratio", "n_pairs"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols)
        writer.writeheader()
        writer.writerows(ratio_rows)


def write_quantiles_csv(quant_rows, path) -> None:
    cols = ["setup", "family", "n", "p", "variant", "n_reps",
            "min", "q25", "median", "q75", "max"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols)
        writer.writeheader()
        writer.writerows(quant_rows)


def write_summary(ratio_rows, quant_rows, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("Geometric-mean paired MSE ratios\n")
        fh.write("=" * 72 + "\n")
        fh.write(f"{'setup':<6}{'family':<14}{'n':>6}{'p':>4}  {'comparison':<24}{'ratio':>12}{'pairs':>6}\n")
        for row in ratio_rows:
            ratio = row["ratio"]
            shown = ratio if ratio == "NA" else f"{float(ratio):.4f}"
            fh.write(
                f"{row['setup']:<6}{row['family']:<14}{row['n']:>6}{row['p']:>4}  "
                f"{row['comparison']:<24}{shown:>12}{row['n_pairs']:>6}\n"
            )
        fh.write("\nPer-variant raw MSE quantiles\n")
        fh.write("=" * 72 + "\n")
        fh.write(
            f"{'setup':<6}{'family':<14}{'n':>6}{'p':>4}  {'variant':<12}"
            f"{'min':>10}{'q25':>10}{'median':>10}{'q75':>10}{'max':>10}\n"
        )
        for row in quant_rows:
            fh.write(
                f"{row['setup']:<6}{row['family']:<14}{row['n']:>6}{row['p']:>4}  "
                f"{row['variant']:<12}"
                + "".join(f"{float(row[k]):>10.4f}" for k in ("min", "q25", "median", "q75", "max"))
                + "\n"
            )


def config_from_dict(d: dict) -> ExperimentConfig:
    if "cells" in d:
        cells = [ExperimentCell(c["setup"], c["family"], int(c["n"]), int(c["p"]))
                 for c in d["cells"]]
    elif "matrix" in d:
        m = d["matrix"]
        cells = [
            ExperimentCell(s, f, int(n), int(p))
            for s in m["setups"]
            for f in m["families"]
            for n in m["n"]
            for p in m["p"]
        ]
    else:
        raise ValidationError("config needs 'cells' or 'matrix'")
    fd = d.get("forest", {})
    tree = TreeConfig(
        min_node_size=fd.get("min_node_size", 14),
        mtry=fd.get("mtry"),
        alpha=fd.get("alpha", 1.0),
        max_depth=fd.get("max_depth"),
    )
    forest = ForestConfig(
        n_trees=fd.get("n_trees", 100),
        subsample_fraction=fd.get("subsample_fraction", 0.5),
        tree=tree,
    )
    bd = d.get("boost", {})
    boost = BoostConfig(
        n_rounds=bd.get("n_rounds", 100),
        learning_rate=bd.get("learning_rate", 0.1),
        max_tree_depth=bd.get("max_tree_depth", 2),
    )
    return ExperimentConfig(
        cells=cells,
        variants=list(d.get("variants", [NAIVE, ROBINSON_W, ROBINSON])),
        replications=int(d.get("replications", 10)),
        test_size=int(d.get("test_size", 1000)),
        forest=forest,
        propensity=dict(d.get("propensity", {})),
        boost=boost,
        master_seed=int(d.get("master_seed", 20260808)),
        workers=int(d.get("workers", 1)),
        gaussian_direct_m=bool(d.get("gaussian_direct_m", False)),
        output_dir=d.get("output_dir"),
    )


def apply_paper_scale(cfg: ExperimentConfig) -> ExperimentConfig:
    """500-tree preset over the full setup x family x size matrix."""
    cells = [
        ExperimentCell(s, f, n, p)
        for s in ("A", "B", "C", "D")
        for f in FAMILY_LABELS
        for n in (800, 1600)
        for p in (10, 20)
    ]
    return replace(cfg, cells=cells, forest=replace(cfg.forest, n_trees=500))


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))


def fit_external(data: Dataset, family_name: str, variant: str,
                 forest_cfg: ForestConfig, *, boost: BoostConfig | None = None,
                 propensity_kwargs: dict | None = None, seed: int = 0,
                 n_density_bins: int = 30) -> dict:
    """Fit one variant on an ingested dataset; per-row effects plus a binned
    effect density for external plotting.

    Returns a dict with 'rows' (per-observation tau_hat/pi_hat/...),
    'density' (bin_left, bin_right, count), 'mean_tau', and the forest.
    """
    family = family_for(family_name, n_levels=data.n_levels)
    ss = np.random.SeedSequence(seed)
    nuis_seed, forest_seed = (int(s.generate_state(1, np.uint64)[0]) >> 1
                              for s in ss.spawn(2))
    _, _, need_gao = _variant_needs([variant])
    profile = None
    if variant != NAIVE:
        profile = estimate_profile(
            data, family, need_gao=need_gao,
            propensity_kwargs=dict(propensity_kwargs or {}),
            boost_cfg=boost, seed=nuis_seed,
        )
    design = build_design(variant, profile, data)
    forest = fit_forest(data, family, design,
                        replace(forest_cfg, rng_seed=forest_seed))
    mu_hat, tau_hat, n_fb = predict_effects(forest, data.x)
    rows = []
    for i in range(data.n):
        row = {"row": i, "tau_hat": tau_hat[i], "mu_hat": mu_hat[i]}
        if profile is not None:
            row["pi_hat"] = profile.pi[i]
            if profile.a is not None:
                row["a_hat"] = profile.a[i]
        rows.append(row)
    counts, edges = np.histogram(tau_hat, bins=n_density_bins)
    density = [
        {"bin_left": edges[i], "bin_right": edges[i + 1], "count": int(counts[i])}
        for i in range(len(counts))
    ]
    mean_tau = float(np.mean(tau_hat))
    log.info("mean estimated effect tau_bar = %.4f (%s scale)",
             mean_tau, family.natural_scale)
    return {
        "rows": rows,
        "density": density,
        "mean_tau": mean_tau,
        "n_fallback": n_fb,
        "forest": forest,
        "profile": profile,
    }
