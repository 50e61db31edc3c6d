"""Command-line front end: ingestion, estimation, intervals, experiments.

Subcommands
-----------
``ingest-check``   parse a CSV file and report its shape
``estimate``       full pipeline: sampling, BF estimation, interval, report
``interval``       report-only interval arithmetic from (bf, sigma, alpha)
``experiment``     consistency / coverage / normality simulation studies

Exit codes: 0 success, 2 validation failure, 3 chain failure.  All
randomness is controlled by the configured seed (``--seed`` overrides);
two runs with identical inputs and seed produce byte-identical reports.
The ``FORENSIC_BF_THREADS`` environment variable caps experiment worker
concurrency.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, asymptotics
from .bayes_factor import (
    BfForm,
    bf_inverse_mean,
    bf_posterior_mean,
    bf_prior_form,
    credible_interval,
    posterior_sd_lr,
)
from .report import dumps_report, file_sha256, format_float
from .sampler import (
    ChainConfig,
    InverseWishartPrior,
    MeanPrior,
    PriorSpec,
    derive_prior,
    gibbs_cs,
    gibbs_ss,
)
from .types import (
    BackgroundDatabase,
    ChainFailureError,
    CommonSourceParams,
    ForensicBfError,
    Framework,
    InvalidParameterError,
    JointParams,
    Model,
    ObservationSet,
    SpecificSourceParams,
    as_framework,
)

__all__ = [
    "IngestError",
    "ingest_csv",
    "ingest_background",
    "ingest_observation_set",
    "export_csv",
    "AnalysisConfig",
    "run_estimate",
    "run_experiment",
    "main",
]

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_CHAIN_FAILURE = 3


class IngestError(ForensicBfError):
    """CSV ingestion failure with a stable error code and row number."""

    def __init__(self, code: str, message: str, row: int = None):
        super().__init__(message)
        self.code = code
        self.row = row


def _parse_header(header, path):
    if header is None:
        raise IngestError("empty-file", f"{path}: file is empty")
    expected_prefix = ["source_id", "item_id"]
    if len(header) < 3 or header[:2] != expected_prefix:
        raise IngestError(
            "bad-header",
            f"{path}: header must be 'source_id,item_id,f1,...,fp', got {header!r}",
            row=1,
        )
    features = header[2:]
    if features != [f"f{i + 1}" for i in range(len(features))]:
        raise IngestError(
            "bad-header",
            f"{path}: feature columns must be named f1..f{len(features)}",
            row=1,
        )
    return len(features)


def ingest_csv(path):
    """Parse a CSV file into a background database or one observation set.

    Schema: header ``source_id,item_id,f1,...,fp``; one feature vector
    per row, row order preserved.  A file with a single distinct
    source_id yields an :class:`ObservationSet`; two or more yield a
    :class:`BackgroundDatabase`.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        p = _parse_header(header, path)
        order = []
        rows_by_source = {}
        seen_items = set()
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2 + p:
                raise IngestError(
                    "ragged-row",
                    f"{path}:{row_no}: expected {2 + p} fields, got {len(row)}",
                    row=row_no,
                )
            source_id, item_id = row[0], row[1]
            key = (source_id, item_id)
            if key in seen_items:
                raise IngestError(
                    "duplicate-item",
                    f"{path}:{row_no}: duplicate (source_id, item_id) = {key}",
                    row=row_no,
                )
            seen_items.add(key)
            try:
                values = [float(v) for v in row[2:]]
            except ValueError:
                raise IngestError(
                    "non-numeric",
                    f"{path}:{row_no}: non-numeric feature value",
                    row=row_no,
                ) from None
            if not all(math.isfinite(v) for v in values):
                raise IngestError(
                    "non-numeric",
                    f"{path}:{row_no}: non-finite feature value",
                    row=row_no,
                )
            if source_id not in rows_by_source:
                rows_by_source[source_id] = []
                order.append(source_id)
            rows_by_source[source_id].append(values)
    if not order:
        raise IngestError("empty-file", f"{path}: no data rows")
    sets = [ObservationSet(sid, np.array(rows_by_source[sid])) for sid in order]
    if len(sets) == 1:
        return sets[0]
    return BackgroundDatabase(tuple(sets))


def ingest_background(path) -> BackgroundDatabase:
    parsed = ingest_csv(path)
    if not isinstance(parsed, BackgroundDatabase):
        raise IngestError(
            "bad-shape",
            f"{path}: expected a multi-source background file, found one source",
        )
    return parsed


def ingest_observation_set(path) -> ObservationSet:
    parsed = ingest_csv(path)
    if not isinstance(parsed, ObservationSet):
        raise IngestError(
            "bad-shape",
            f"{path}: expected a single-source file, found several source ids",
        )
    return parsed


def export_csv(data, path):
    """Write a database or observation set back to the ingestion schema."""
    sets = data.sources if isinstance(data, BackgroundDatabase) else [data]
    p = sets[0].p
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["source_id", "item_id"] + [f"f{i + 1}" for i in range(p)])
        for s in sets:
            for i, item in enumerate(s.items, start=1):
                writer.writerow([s.label, str(i)] + [format_float(v) for v in item])


def export_draws_csv(draws, path):
    """Flatten posterior draws to CSV, one row per draw.

    Columns: ``draw`` (kept-draw index), ``chain``, then the parameter
    blocks present in the draws: ``mu_i``, ``sigma_b_i_j`` and
    ``sigma_w_i_j`` (full matrices, row-major), and for specific-source
    runs ``mu_b_i`` and ``sigma_wb_i_j``.  Numbers carry 17 significant
    digits, so values round-trip exactly.
    """
    p = draws.p
    columns = ["draw", "chain"]
    blocks = []
    if draws.has_theta_a:
        columns += [f"mu_{i + 1}" for i in range(p)]
        columns += [f"sigma_b_{i + 1}_{j + 1}" for i in range(p) for j in range(p)]
        columns += [f"sigma_w_{i + 1}_{j + 1}" for i in range(p) for j in range(p)]
        blocks += [
            lambda t: draws.mu[t],
            lambda t: draws.sigma_b[t].ravel(),
            lambda t: draws.sigma_w[t].ravel(),
        ]
    if draws.has_theta_b:
        columns += [f"mu_b_{i + 1}" for i in range(p)]
        columns += [f"sigma_wb_{i + 1}_{j + 1}" for i in range(p) for j in range(p)]
        blocks += [lambda t: draws.mu_b[t], lambda t: draws.sigma_wb[t].ravel()]
    per_chain = draws.n_draws // draws.n_chains
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(columns)
        for t in range(draws.n_draws):
            row = [str(t), str(t // per_chain)]
            for block in blocks:
                row += [format_float(v) for v in block(t)]
            writer.writerow(row)


# --- configuration --------------------------------------------------------------


def _as_matrix(value, name):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise InvalidParameterError(f"prior field {name} must be a matrix")
    return arr


def prior_from_dict(spec: dict, base_dir: Path = None):
    """Build a PriorSpec from explicit hyperparameters or a held-out file.

    ``{"derive_from": "heldout.csv"}`` applies the method-of-moments
    convention of :func:`forensic_bf.sampler.derive_prior`.
    """
    if "derive_from" in spec:
        heldout_path = Path(spec["derive_from"])
        if base_dir is not None and not heldout_path.is_absolute():
            heldout_path = base_dir / heldout_path
        heldout = ingest_background(heldout_path)
        return derive_prior(heldout), heldout_path
    try:
        mean = MeanPrior(m0=np.atleast_1d(spec["m0"]), V0=_as_matrix(spec["V0"], "V0"))
        between = InverseWishartPrior(
            nu=float(spec["nu_b"]), scale=_as_matrix(spec["S_b"], "S_b")
        )
        within = InverseWishartPrior(
            nu=float(spec["nu_w"]), scale=_as_matrix(spec["S_w"], "S_w")
        )
        subject_mean = None
        subject_within = None
        if "m0_b" in spec:
            subject_mean = MeanPrior(
                m0=np.atleast_1d(spec["m0_b"]), V0=_as_matrix(spec["V0_b"], "V0_b")
            )
            subject_within = InverseWishartPrior(
                nu=float(spec["nu_wb"]), scale=_as_matrix(spec["S_wb"], "S_wb")
            )
    except KeyError as exc:
        raise InvalidParameterError(f"prior specification missing field {exc}") from None
    return (
        PriorSpec(
            mean=mean,
            between=between,
            within=within,
            subject_mean=subject_mean,
            subject_within=subject_within,
        ),
        None,
    )


def chain_from_dict(spec: dict, seed_override=None) -> ChainConfig:
    fields = {k: int(spec[k]) for k in ("iterations", "burn_in") if k in spec}
    for key in ("thinning", "chains", "min_draws"):
        if key in spec:
            fields[key] = int(spec[key])
    seed = seed_override if seed_override is not None else spec.get("seed")
    if seed is None:
        raise InvalidParameterError(
            "no seed: provide chain.seed in the config or pass --seed"
        )
    fields["seed"] = int(seed)
    return ChainConfig(**fields)


DEFAULT_FORMS = (
    BfForm.POSTERIOR_MEAN_M2,
    BfForm.INVERSE_MEAN_M1,
    BfForm.PRIOR,
)


@dataclasses.dataclass(frozen=True)
class AnalysisConfig:
    """Validated configuration of one estimation run."""

    framework: Framework
    background_path: Path
    x_b_path: Path
    x_c_path: Path
    prior: PriorSpec
    chain: ChainConfig
    alpha: float
    forms: tuple
    raw: dict
    heldout_path: Path = None

    @classmethod
    def from_file(cls, path, seed_override=None) -> "AnalysisConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidParameterError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(raw, base_dir=path.parent, seed_override=seed_override)

    @classmethod
    def from_dict(cls, raw: dict, base_dir=None, seed_override=None) -> "AnalysisConfig":
        base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
        try:
            framework = as_framework(raw["framework"])
            paths = {}
            for key in ("background", "x_b", "x_c"):
                p = Path(raw[key])
                if not p.is_absolute():
                    p = base_dir / p
                if not p.exists():
                    raise InvalidParameterError(f"input file does not exist: {p}")
                paths[key] = p
            prior, heldout_path = prior_from_dict(raw["prior"], base_dir=base_dir)
            chain = chain_from_dict(raw.get("chain", {}), seed_override=seed_override)
            alpha = float(raw.get("alpha", 0.05))
            forms = tuple(BfForm(f) for f in raw.get("forms", [f.value for f in DEFAULT_FORMS]))
        except KeyError as exc:
            raise InvalidParameterError(f"config missing field {exc}") from None
        except ValueError as exc:
            raise InvalidParameterError(f"invalid config value: {exc}") from exc
        if not 0.0 < alpha < 1.0:
            raise InvalidParameterError(f"alpha must lie in (0, 1), got {alpha}")
        if not forms:
            raise InvalidParameterError("config requests no estimator forms")
        if framework is Framework.SPECIFIC_SOURCE and not prior.has_subject:
            raise InvalidParameterError(
                "specific-source estimation needs subject prior blocks "
                "(m0_b, V0_b, nu_wb, S_wb) or a derived prior"
            )
        return cls(
            framework=framework,
            background_path=paths["background"],
            x_b_path=paths["x_b"],
            x_c_path=paths["x_c"],
            prior=prior,
            chain=chain,
            alpha=alpha,
            forms=forms,
            raw=raw,
            heldout_path=heldout_path,
        )


# --- estimation pipeline ---------------------------------------------------------


def _estimate_seed(seed: int, purpose: int) -> int:
    return int(
        np.random.SeedSequence(entropy=int(seed), spawn_key=(purpose,)).generate_state(
            1, dtype=np.uint64
        )[0]
    )


def _estimate_to_dict(est) -> dict:
    return {
        "form": est.form.value,
        "log_value": est.log_value,
        "value": est.value,
        "mc_standard_error": est.mc_standard_error,
        "n_draws": est.n_draws,
        "ess": est.ess,
        "rejected": est.rejected,
        "warnings": list(est.warnings),
    }


def _interval_to_dict(interval) -> dict:
    return {
        "center": interval.center,
        "sigma_n": interval.sigma_n,
        "alpha": interval.alpha,
        "z": interval.z,
        "lower": interval.lower,
        "upper": interval.upper,
        "lower_untruncated": interval.lower_untruncated,
    }


def run_estimate(config: AnalysisConfig, export_draws_prefix=None) -> dict:
    """Execute the configured samplers and estimators; assemble the report.

    Runs one M2-conditioned chain for the posterior-mean form (which
    also provides sigma_n and the credible interval), one M1-conditioned
    chain for the inverse-mean form, and background/subject chains for
    the prior form, each on its own derived seed stream.  With
    ``export_draws_prefix`` the M2/M1 chains are flattened to
    ``<prefix>_m2.csv`` / ``<prefix>_m1.csv``.
    """
    db = ingest_background(config.background_path)
    x_b = ingest_observation_set(config.x_b_path)
    x_c = ingest_observation_set(config.x_c_path)

    gibbs = gibbs_cs if config.framework is Framework.COMMON_SOURCE else gibbs_ss
    estimates = {}
    diagnostics = {"chain_failures": 0, "ess": {}, "n_latent_effects": {}}
    warnings_seen = []
    sigma_n = None
    interval = None

    if BfForm.POSTERIOR_MEAN_M2 in config.forms:
        chain = config.chain.replace(seed=_estimate_seed(config.chain.seed, 0))
        draws = gibbs(db, x_b, x_c, config.prior, Model.M2, chain)
        est = bf_posterior_mean(draws, x_c, x_b, min_draws=config.chain.min_draws)
        estimates[est.form.value] = est
        sigma_n = posterior_sd_lr(draws, x_c, x_b)
        interval = credible_interval(est.value, sigma_n, config.alpha)
        diagnostics["ess"]["m2_chain"] = draws.diagnostics["ess"]
        diagnostics["n_latent_effects"]["m2_chain"] = draws.diagnostics["n_latent_effects"]
        if export_draws_prefix is not None:
            export_draws_csv(draws, f"{export_draws_prefix}_m2.csv")
    if BfForm.INVERSE_MEAN_M1 in config.forms:
        chain = config.chain.replace(seed=_estimate_seed(config.chain.seed, 1))
        draws = gibbs(db, x_b, x_c, config.prior, Model.M1, chain)
        est = bf_inverse_mean(draws, x_c, x_b, min_draws=config.chain.min_draws)
        estimates[est.form.value] = est
        warnings_seen.extend(est.warnings)
        diagnostics["ess"]["m1_chain"] = draws.diagnostics["ess"]
        diagnostics["n_latent_effects"]["m1_chain"] = draws.diagnostics["n_latent_effects"]
        if export_draws_prefix is not None:
            export_draws_csv(draws, f"{export_draws_prefix}_m1.csv")
    if BfForm.PRIOR in config.forms:
        est = bf_prior_form(
            config.prior,
            db,
            x_b,
            x_c,
            config.framework,
            n_draws=config.chain.kept_total,
            seed=_estimate_seed(config.chain.seed, 2),
            min_draws=config.chain.min_draws,
        )
        estimates[est.form.value] = est
        diagnostics["rejected_draws"] = {"prior_form": est.rejected}

    diagnostics["heavy_tail_warnings"] = warnings_seen
    inputs = {
        "background": {
            "path": str(config.background_path),
            "sha256": file_sha256(config.background_path),
        },
        "x_b": {"path": str(config.x_b_path), "sha256": file_sha256(config.x_b_path)},
        "x_c": {"path": str(config.x_c_path), "sha256": file_sha256(config.x_c_path)},
    }
    if config.heldout_path is not None:
        inputs["prior_heldout"] = {
            "path": str(config.heldout_path),
            "sha256": file_sha256(config.heldout_path),
        }
    report = {
        "software": {"name": "forensic-bf", "version": __version__},
        "mode": "estimate",
        "framework": config.framework.value,
        "seed": config.chain.seed,
        "alpha": config.alpha,
        "inputs": inputs,
        "config": config.raw,
        "estimates": {k: _estimate_to_dict(v) for k, v in estimates.items()},
        "diagnostics": diagnostics,
    }
    if sigma_n is not None:
        report["sigma_n"] = sigma_n
        report["interval"] = _interval_to_dict(interval)
    return report


# --- experiments -----------------------------------------------------------------


def _truth_from_dict(raw: dict, framework: Framework):
    theta_a = CommonSourceParams(
        mu=np.atleast_1d(raw["mu"]),
        sigma_b=_as_matrix(raw["sigma_b"], "sigma_b"),
        sigma_w=_as_matrix(raw["sigma_w"], "sigma_w"),
    )
    if framework is Framework.COMMON_SOURCE:
        return theta_a
    return JointParams(
        theta_a=theta_a,
        theta_b=SpecificSourceParams(
            mu_b=np.atleast_1d(raw["mu_b"]),
            sigma_wb=_as_matrix(raw["sigma_wb"], "sigma_wb"),
        ),
    )


def _spec_from_config(raw: dict) -> asymptotics.TrueModelSpec:
    framework = as_framework(raw["framework"])
    theta0 = _truth_from_dict(raw["truth"], framework)
    return asymptotics.TrueModelSpec.generate(
        framework,
        theta0,
        raw.get("generating_model", "M1"),
        n_b=int(raw.get("n_b", 1)),
        n_c=int(raw.get("n_c", 1)),
        seed=int(raw["freeze_seed"]),
        n_w=int(raw.get("n_w", 5)),
    )


def _rows_to_csv(rows, path):
    if not rows:
        Path(path).write_text("", encoding="utf-8")
        return
    names = [f.name for f in dataclasses.fields(rows[0])]
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(names)
        for row in rows:
            out = []
            for name in names:
                value = getattr(row, name)
                if isinstance(value, float):
                    out.append(format_float(value) if math.isfinite(value) else "")
                else:
                    out.append(value)
            writer.writerow(out)


def _print_summary_table(summary, stream):
    if not summary:
        return
    keys = sorted({k for entry in summary for k in entry}, key=lambda k: (k != "n", k))
    stream.write("  ".join(f"{k:>22}" for k in keys) + "\n")
    for entry in summary:
        cells = []
        for k in keys:
            v = entry.get(k, "")
            if isinstance(v, float):
                v = f"{v:.6g}"
            cells.append(f"{str(v):>22}")
        stream.write("  ".join(cells) + "\n")


def run_experiment(kind: str, raw: dict, out_prefix, seed_override=None, stream=None):
    """Dispatch one experiment kind, write CSV rows + JSON summary.

    The schedule is processed point by point so partially completed
    experiments still flush their finished rows if interrupted.
    """
    stream = stream or sys.stdout
    if kind not in ("consistency", "coverage", "normality"):
        raise InvalidParameterError(f"unknown experiment kind: {kind}")
    spec = _spec_from_config(raw)
    prior, _ = prior_from_dict(raw["prior"])
    chain = chain_from_dict(raw.get("chain", {}), seed_override=seed_override)
    schedule = [int(n) for n in raw["schedule"]]
    replicates = int(raw.get("replicates", 50))
    alphas_raw = raw.get("alpha", 0.05)
    if kind == "coverage":
        try:
            alphas_raw = tuple(
                float(a)
                for a in (alphas_raw if isinstance(alphas_raw, (list, tuple)) else [alphas_raw])
            )
        except (TypeError, ValueError):
            raise InvalidParameterError(f"invalid alpha specification: {alphas_raw!r}") from None
    workers = raw.get("workers")
    seed = chain.seed
    out_prefix = Path(out_prefix)

    rows = []
    result = None
    complete = False
    try:
        for n in schedule:
            if kind == "consistency":
                partial = asymptotics.consistency_experiment(
                    spec,
                    [n],
                    replicates,
                    BfForm(raw.get("estimator", "posterior_mean_m2")),
                    prior,
                    chain,
                    seed,
                    workers=workers,
                )
            elif kind == "coverage":
                partial = asymptotics.coverage_experiment(
                    spec,
                    [n],
                    replicates,
                    alphas_raw,
                    prior,
                    chain,
                    seed,
                    workers=workers,
                )
            else:
                partial = asymptotics.normality_experiment(
                    spec, [n], replicates, prior, chain, seed, workers=workers
                )
            rows.extend(partial.rows)
        complete = True
    finally:
        if kind == "consistency":
            result = asymptotics.ConsistencyResult(
                schedule=tuple(n for n in schedule if any(r.n == n for r in rows)),
                replicates=replicates,
                form=BfForm(raw.get("estimator", "posterior_mean_m2")),
                rows=tuple(rows),
                frozen_hashes=spec.frozen_hashes(),
            ) if rows else None
        elif kind == "coverage":
            result = asymptotics.CoverageResult(
                schedule=tuple(n for n in schedule if any(r.n == n for r in rows)),
                replicates=replicates,
                alphas=alphas_raw,
                rows=tuple(rows),
                frozen_hashes=spec.frozen_hashes(),
            ) if rows else None
        else:
            result = asymptotics.NormalityResult(
                schedule=tuple(n for n in schedule if any(r.n == n for r in rows)),
                replicates=replicates,
                rows=tuple(rows),
                frozen_hashes=spec.frozen_hashes(),
            ) if rows else None
        if result is not None:
            _rows_to_csv(list(result.rows), out_prefix.with_suffix(".csv"))
            summary = {
                "software": {"name": "forensic-bf", "version": __version__},
                "mode": f"experiment-{kind}",
                "complete": complete,
                "seed": seed,
                "config": raw,
                "frozen_hashes": result.frozen_hashes,
                "summary": result.summary(),
            }
            out_prefix.with_suffix(".json").write_text(
                dumps_report(summary), encoding="utf-8"
            )
    if result is not None:
        _print_summary_table(result.summary(), stream)
    return result


# --- argument parsing --------------------------------------------------------


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="forensic-bf",
        description=(
            "Bayes factors, likelihood ratios, and LR credible intervals for "
            "common-source and specific-source model selection"
        ),
    )
    parser.add_argument("--version", action="version", version=f"forensic-bf {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest-check", help="validate a CSV data file")
    p_ingest.add_argument("path")

    p_est = sub.add_parser("estimate", help="run the full estimation pipeline")
    p_est.add_argument("--config", required=True)
    p_est.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_est.add_argument("--framework", default=None, help="override the config framework")
    p_est.add_argument("--out", default=None, help="report path (default: stdout)")
    p_est.add_argument(
        "--table", action="store_true", help="also print a human-readable summary"
    )
    p_est.add_argument(
        "--export-draws",
        default=None,
        metavar="PREFIX",
        help="flatten the M2/M1 posterior draws to PREFIX_m2.csv / PREFIX_m1.csv",
    )

    p_int = sub.add_parser("interval", help="interval arithmetic from (bf, sigma, alpha)")
    p_int.add_argument("--bf", type=float, required=True)
    p_int.add_argument("--sigma", type=float, required=True)
    p_int.add_argument("--alpha", type=float, default=0.05)
    p_int.add_argument("--out", default=None)

    p_exp = sub.add_parser("experiment", help="run a simulation experiment")
    p_exp.add_argument(
        "--kind", required=True, choices=["consistency", "coverage", "normality"]
    )
    p_exp.add_argument("--config", required=True)
    p_exp.add_argument("--seed", type=int, default=None)
    p_exp.add_argument("--out", required=True, help="output prefix for .csv/.json")
    return parser


def _cmd_ingest_check(args) -> int:
    parsed = ingest_csv(args.path)
    if isinstance(parsed, BackgroundDatabase):
        print(
            f"background database: {parsed.n_sources} sources, "
            f"{parsed.total_items} items, p={parsed.p}"
        )
    else:
        print(f"observation set {parsed.label!r}: {parsed.n} items, p={parsed.p}")
    return EXIT_OK


def _cmd_estimate(args) -> int:
    config = AnalysisConfig.from_file(args.config, seed_override=args.seed)
    if args.framework is not None and as_framework(args.framework) is not config.framework:
        raise InvalidParameterError(
            f"--framework {args.framework} conflicts with config "
            f"framework {config.framework.value}"
        )
    report = run_estimate(config, export_draws_prefix=args.export_draws)
    text = dumps_report(report)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.table:
        for name, est in sorted(report["estimates"].items()):
            print(
                f"{name:>20}: BF = {est['value']:.6g} "
                f"(log {est['log_value']:.6g}, mc se {est['mc_standard_error']:.3g})"
            )
        if "interval" in report:
            iv = report["interval"]
            print(
                f"{'interval':>20}: ({iv['lower']:.6g}, {iv['upper']:.6g}) "
                f"at alpha={iv['alpha']:g}, sigma_n={iv['sigma_n']:.6g}"
            )
    return EXIT_OK


def _cmd_interval(args) -> int:
    interval = credible_interval(args.bf, args.sigma, args.alpha)
    report = {
        "software": {"name": "forensic-bf", "version": __version__},
        "mode": "interval",
        "interval": _interval_to_dict(interval),
    }
    text = dumps_report(report)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(f"({format_float(interval.lower)}, {format_float(interval.upper)})")
    return EXIT_OK


def _cmd_experiment(args) -> int:
    path = Path(args.config)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidParameterError(f"cannot read config {path}: {exc}") from exc
    run_experiment(args.kind, raw, args.out, seed_override=args.seed)
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "ingest-check": _cmd_ingest_check,
        "estimate": _cmd_estimate,
        "interval": _cmd_interval,
        "experiment": _cmd_experiment,
    }
    try:
        return handlers[args.command](args)
    except ChainFailureError as exc:
        print(f"chain failure: {exc}", file=sys.stderr)
        return EXIT_CHAIN_FAILURE
    except ForensicBfError as exc:
        code = getattr(exc, "code", None)
        prefix = f"[{code}] " if code else ""
        print(f"validation error: {prefix}{exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
