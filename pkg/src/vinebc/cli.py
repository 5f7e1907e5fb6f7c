"""Batch front-end: fit, correct, evaluate and simulate commands.

A single JSON config file drives every command; environment variables
``VINEBC_SEED`` and ``VINEBC_WORKERS`` override only the master seed and the
parallelism degree.  Correction units (one per chunk and member) carry seeds
derived from (master seed, chunk, member), so outputs are byte-identical at
any parallelism degree.  Exit codes: 0 success, 1 config error, 2 data
error, 3 partial unit failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from ._util import subseed
from .correction import CorrectionConfig, ubc_correct, vbc_correct
from .dataset import (
    ALL_CHUNK_KEYS,
    ClimateTable,
    VariableSpec,
    chunk_manifest,
    extend_overlap,
    load_table,
    make_chunks,
)
from .errors import ConfigError, VinebcError
from .evaluation import (
    MetricReport,
    UnitMetrics,
    copula_iw2,
    mci,
    per_margin_iw2,
    wasserstein2,
)
from .marginal import normalize_kind
from .synthetic import BiasSpec, GroundTruth, MarginSpec, make_ensemble_table
from .vine import fit_vine

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_PARTIAL = 3

_CORRECTION_FIELDS = {
    "family_set",
    "bandwidth_rule",
    "overlap_fraction",
    "truncation",
    "delta_mode",
    "atom_threshold",
    "checkerboard_resolution",
    "independence_level",
}


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    if "variables" not in cfg or not isinstance(cfg["variables"], list) or not cfg["variables"]:
        raise ConfigError("variables: required non-empty list")
    for i, v in enumerate(cfg["variables"]):
        if not isinstance(v, dict) or "name" not in v or "kind" not in v:
            raise ConfigError(f"variables[{i}]: need name and kind")
        try:
            normalize_kind(v["kind"])
        except ValueError as exc:
            raise ConfigError(f"variables[{i}].kind: {exc}") from None
    seed = cfg.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed: must be a nonnegative integer")
    if "VINEBC_SEED" in os.environ:
        cfg["seed"] = int(os.environ["VINEBC_SEED"])
    workers = cfg.get("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        raise ConfigError("workers: must be a positive integer")
    if "VINEBC_WORKERS" in os.environ:
        cfg["workers"] = max(1, int(os.environ["VINEBC_WORKERS"]))
    unknown = set(cfg.get("correction", {})) - _CORRECTION_FIELDS
    if unknown:
        raise ConfigError(f"correction: unknown fields {sorted(unknown)}")
    return cfg


def _variable_specs(cfg: dict) -> list:
    return [VariableSpec(v["name"], v["kind"], v.get("units", "")) for v in cfg["variables"]]


def _correction_config(cfg: dict) -> CorrectionConfig:
    c = dict(cfg.get("correction", {}))
    if "family_set" in c:
        c["family_set"] = tuple(c["family_set"])
    try:
        return CorrectionConfig(seed=cfg.get("seed", 0), **c)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"correction: {exc}") from None


def _digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _fmt(x: float) -> str:
    return repr(float(x))


def write_table_csv(path: str, table: ClimateTable, extra: dict | None = None) -> None:
    extra = extra or {}
    with open(path, "w") as fh:
        cols = ["timestamp", "member"] + table.var_names + list(extra)
        fh.write(",".join(cols) + "\n")
        ts = table.timestamps.astype("datetime64[s]").astype(str)
        for i in range(len(table)):
            row = [ts[i], str(int(table.members[i]))]
            row += [_fmt(v) for v in table.values[i]]
            row += [str(extra[k][i]) for k in extra]
            fh.write(",".join(row) + "\n")


def _write_manifest(path: str, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- correct -----------------------------------------------------------------


def _correct_unit(payload: dict) -> dict:
    """Run one (chunk, member) correction unit; returns values or an error."""
    try:
        config = CorrectionConfig(**payload["config"]).with_seed(payload["seed"])
        fn = vbc_correct if payload["method"] == "vbc" else ubc_correct
        corrected = fn(
            payload["x_mp"],
            payload["x_rc"],
            payload["x_mc"],
            payload["kinds"],
            config,
            mp_fit=payload["mp_fit"],
            rc_fit=payload["rc_fit"],
            provenance={"chunk": payload["chunk"], "member": payload["member"]},
        )
        return {"unit": payload["unit"], "values": corrected.values}
    except VinebcError as exc:
        return {"unit": payload["unit"], "error": f"{type(exc).__name__}: {exc}"}


def _config_as_dict(config: CorrectionConfig) -> dict:
    return {
        "family_set": tuple(config.family_set),
        "bandwidth_rule": config.bandwidth_rule,
        "overlap_fraction": config.overlap_fraction,
        "truncation": config.truncation,
        "delta_mode": config.delta_mode,
        "atom_threshold": config.atom_threshold,
        "checkerboard_resolution": config.checkerboard_resolution,
        "independence_level": config.independence_level,
    }


def cmd_correct(cfg: dict, method: str, mp_path: str, rc_path: str, mc_path: str,
                out_dir: str) -> int:
    specs = _variable_specs(cfg)
    config = _correction_config(cfg)
    seed = cfg.get("seed", 0)
    workers = cfg.get("workers", 1)
    mp = load_table(mp_path, specs)
    rc = load_table(rc_path, specs)
    mc = load_table(mc_path, specs)

    mp_chunks = {k: extend_overlap(c, mp, config.overlap_fraction, subseed(seed, 1, i))
                 for i, (k, c) in enumerate(make_chunks(mp).items())}
    rc_chunks = {k: extend_overlap(c, rc, config.overlap_fraction, subseed(seed, 2, i))
                 for i, (k, c) in enumerate(make_chunks(rc).items())}
    mc_chunks = {k: extend_overlap(c, mc, config.overlap_fraction, subseed(seed, 3, i))
                 for i, (k, c) in enumerate(make_chunks(mc).items())}

    members = sorted(int(m) for m in np.unique(mp.members))
    payloads = []
    unit_rows = {}
    unit_seeds = {}
    for ci, key in enumerate(ALL_CHUNK_KEYS):
        chunk = mp_chunks[key]
        rc_fit = rc.values[rc_chunks[key].estimation_rows]
        x_mc = mc.values[mc_chunks[key].estimation_rows]
        for member in members:
            unit = f"{key.label}/m{member}"
            in_member = mp.members[chunk.core_rows] == member
            core_rows = chunk.core_rows[in_member]
            est_rows = chunk.estimation_rows[mp.members[chunk.estimation_rows] == member]
            unit_rows[unit] = core_rows
            unit_seed = subseed(seed, ci, member)
            unit_seeds[unit] = unit_seed
            if core_rows.size == 0:
                continue
            payloads.append(
                {
                    "unit": unit,
                    "chunk": key.label,
                    "member": member,
                    "method": method,
                    "seed": unit_seed,
                    "config": _config_as_dict(config),
                    "kinds": mp.kinds,
                    "x_mp": mp.values[core_rows],
                    "mp_fit": mp.values[est_rows],
                    "x_rc": rc.values[rc_chunks[key].core_rows],
                    "rc_fit": rc_fit,
                    "x_mc": x_mc,
                }
            )

    if workers > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_correct_unit, payloads))
    else:
        results = [_correct_unit(p) for p in payloads]
    results = {r["unit"]: r for r in results}

    corrected = np.full_like(mp.values, np.nan)
    chunk_col = np.empty(len(mp), dtype=object)
    seed_col = np.zeros(len(mp), dtype=np.int64)
    failures = {}
    for unit, rows in unit_rows.items():
        res = results.get(unit)
        if res is None:
            continue
        if "error" in res:
            failures[unit] = res["error"]
            continue
        corrected[rows] = res["values"]
        chunk_col[rows] = unit.split("/")[0]
        seed_col[rows] = unit_seeds[unit]

    os.makedirs(out_dir, exist_ok=True)
    ok_rows = ~np.isnan(corrected).any(axis=1)
    out_table = ClimateTable(
        specs, mp.timestamps[ok_rows], mp.members[ok_rows], corrected[ok_rows]
    )
    out_csv = os.path.join(out_dir, f"corrected_{method}.csv")
    write_table_csv(
        out_csv,
        out_table,
        extra={
            "chunk": chunk_col[ok_rows],
            "method": np.full(int(ok_rows.sum()), method, dtype=object),
            "unit_seed": seed_col[ok_rows],
        },
    )
    manifest = {
        "command": "correct",
        "method": method,
        "version": __version__,
        "config": {**cfg, "correction": _config_as_dict(config)},
        "inputs": {p: _digest(p) for p in (mp_path, rc_path, mc_path)},
        "master_seed": seed,
        "unit_seeds": {u: int(s) for u, s in unit_seeds.items()},
        "failures": failures,
        "outputs": [out_csv],
        "chunks": {k.label: len(v.core_rows) for k, v in mp_chunks.items()},
    }
    _write_manifest(os.path.join(out_dir, f"manifest_correct_{method}.json"), manifest)
    if failures:
        print(f"{len(failures)} unit(s) failed:", file=sys.stderr)
        for unit, err in sorted(failures.items()):
            print(f"  {unit}: {err}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


# -- evaluate ----------------------------------------------------------------


def cmd_evaluate(cfg: dict, model_path: str, corrected_path: str, ref_path: str,
                 out_dir: str) -> int:
    specs = _variable_specs(cfg)
    seed = cfg.get("seed", 0)
    model = load_table(model_path, specs)
    corrected = load_table(corrected_path, specs)
    ref = load_table(ref_path, specs)
    if len(model) != len(corrected) or np.any(model.members != corrected.members) or np.any(
        model.timestamps != corrected.timestamps
    ):
        raise VinebcError("model and corrected tables are not row-aligned")

    method = "corrected"
    chunks = make_chunks(model)
    ref_chunks = make_chunks(ref)
    report = MetricReport()
    series_rows = []
    for ci, key in enumerate(ALL_CHUNK_KEYS):
        rows = chunks[key].core_rows
        ref_rows = ref_chunks[key].core_rows
        if rows.size == 0 or ref_rows.size == 0:
            continue
        x_ref = ref.values[ref_rows]
        for member in sorted(int(m) for m in np.unique(model.members[rows])):
            sel = rows[model.members[rows] == member]
            x_m = model.values[sel]
            x_c = corrected.values[sel]
            unit_seed = subseed(seed, ci, member)
            w2_model = wasserstein2(x_m, x_ref, standardize=True, seed=unit_seed)
            w2_corr = wasserstein2(x_c, x_ref, standardize=True, seed=unit_seed)
            margin = per_margin_iw2(x_c, x_m, x_ref)
            cop = copula_iw2(x_c, x_m, x_ref, seed=unit_seed)
            series, mci_mean = mci(x_m, x_c)
            report.add(
                UnitMetrics(
                    chunk=key.label,
                    member=member,
                    method=method,
                    w2_model=w2_model,
                    w2_corrected=w2_corr,
                    mci_mean=mci_mean,
                    copula_iw2=cop,
                    margin_iw2={n: float(v) for n, v in zip(model.var_names, margin)},
                    seed=unit_seed,
                )
            )
            ts = model.timestamps[sel].astype("datetime64[s]").astype(str)
            series_rows.extend(
                (method, key.label, member, t, _fmt(v)) for t, v in zip(ts, series)
            )

    os.makedirs(out_dir, exist_ok=True)
    paths = emit_report(report, out_dir)
    series_path = os.path.join(out_dir, "mci_series.csv")
    with open(series_path, "w") as fh:
        fh.write("method,chunk,member,timestamp,mci\n")
        for row in series_rows:
            fh.write(",".join(str(c) for c in row) + "\n")
    manifest = {
        "command": "evaluate",
        "version": __version__,
        "config": cfg,
        "inputs": {p: _digest(p) for p in (model_path, corrected_path, ref_path)},
        "master_seed": seed,
        "outputs": paths + [series_path],
    }
    _write_manifest(os.path.join(out_dir, "manifest_evaluate.json"), manifest)
    return EXIT_OK


def emit_report(report: MetricReport, out_dir: str, formats=("csv", "json")) -> list:
    """Write the metric report as long-format CSV rows and a JSON aggregate."""
    paths = []
    if "csv" in formats:
        csv_path = os.path.join(out_dir, "report.csv")
        with open(csv_path, "w") as fh:
            fh.write("method,chunk,member,metric,value\n")
            for u in report.sorted_units():
                base = f"{u.method},{u.chunk},{u.member}"
                fh.write(f"{base},w2_model,{_fmt(u.w2_model)}\n")
                fh.write(f"{base},w2_corrected,{_fmt(u.w2_corrected)}\n")
                fh.write(f"{base},iw2,{_fmt(u.iw2)}\n")
                fh.write(f"{base},copula_iw2,{_fmt(u.copula_iw2)}\n")
                fh.write(f"{base},mci_mean,{_fmt(u.mci_mean)}\n")
                fh.write(f"{base},non_invasive,{int(u.non_invasive)}\n")
                for name, val in u.margin_iw2.items():
                    fh.write(f"{base},iw2_margin_{name},{_fmt(val)}\n")
        paths.append(csv_path)
    if "json" in formats:
        json_path = os.path.join(out_dir, "report.json")
        with open(json_path, "w") as fh:
            json.dump(report.aggregates(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        paths.append(json_path)
    return paths


# -- fit ----------------------------------------------------------------------


def cmd_fit(cfg: dict, input_path: str, out_dir: str) -> int:
    specs = _variable_specs(cfg)
    config = _correction_config(cfg)
    seed = cfg.get("seed", 0)
    table = load_table(input_path, specs)
    chunks = {k: extend_overlap(c, table, config.overlap_fraction, subseed(seed, 1, i))
              for i, (k, c) in enumerate(make_chunks(table).items())}
    os.makedirs(out_dir, exist_ok=True)
    outputs = []
    failures = {}
    for ci, key in enumerate(ALL_CHUNK_KEYS):
        rows = chunks[key].estimation_rows
        if rows.size == 0:
            continue
        try:
            model = fit_vine(
                table.values[rows],
                table.kinds,
                family_set=config.family_set,
                seed=subseed(seed, 4, ci),
                truncation=config.truncation,
                bandwidth_rule=config.bandwidth_rule,
                atom_threshold=config.atom_threshold,
                independence_level=config.independence_level,
                checkerboard_resolution=config.checkerboard_resolution,
                var_names=table.var_names,
            )
        except VinebcError as exc:
            failures[key.label] = f"{type(exc).__name__}: {exc}"
            continue
        path = os.path.join(out_dir, f"model_{key.label}.json")
        model.save(path)
        outputs.append(path)
    manifest = {
        "command": "fit",
        "version": __version__,
        "config": {**cfg, "correction": _config_as_dict(config)},
        "inputs": {input_path: _digest(input_path)},
        "master_seed": seed,
        "chunks": chunk_manifest(chunks),
        "failures": failures,
        "outputs": outputs,
    }
    _write_manifest(os.path.join(out_dir, "manifest_fit.json"), manifest)
    if failures:
        for label, err in sorted(failures.items()):
            print(f"  {label}: {err}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


# -- simulate -------------------------------------------------------------------


def _simulate_spec(cfg: dict):
    sim = cfg.get("simulate")
    if not isinstance(sim, dict):
        raise ConfigError("simulate: required object for the simulate command")
    specs = _variable_specs(cfg)
    names = [s.name for s in specs]
    margins_cfg = sim.get("margins")
    if not isinstance(margins_cfg, list) or len(margins_cfg) != len(specs):
        raise ConfigError("simulate.margins: need one margin spec per variable")
    margins = []
    for i, (m, s) in enumerate(zip(margins_cfg, specs)):
        try:
            margins.append(
                MarginSpec(
                    kind=s.kind,
                    loc=float(m.get("loc", 0.0)),
                    scale=float(m.get("scale", 1.0)),
                    inflation=float(m.get("inflation", 0.0)),
                )
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"simulate.margins[{i}]: {exc}") from None
    tau = np.asarray(sim.get("tau", np.zeros((len(specs), len(specs)))), dtype=float)
    if tau.shape != (len(specs), len(specs)):
        raise ConfigError(f"simulate.tau: must be a {len(specs)}x{len(specs)} matrix")
    truth = GroundTruth(margins=margins, tau=tau)
    bias_cfg = sim.get("bias", {})

    def named(d):
        out = {}
        for k, v in d.items():
            if k not in names:
                raise ConfigError(f"simulate.bias: unknown variable {k!r}")
            out[names.index(k)] = float(v)
        return out

    bias = BiasSpec(
        shift=named(bias_cfg.get("shift", {})),
        scale=named(bias_cfg.get("scale", {})),
        inflation=named(bias_cfg.get("inflation", {})),
        dependence_scale=float(bias_cfg.get("dependence_scale", 1.0)),
    )
    members = sim.get("members", [1])
    steps = int(sim.get("steps_per_member", 2920))
    start_c = sim.get("start", "2001-01-01T00:00:00")
    start_p = sim.get("projection_start", "2011-01-01T00:00:00")
    return specs, truth, bias, members, steps, start_c, start_p


def cmd_simulate(cfg: dict, out_dir: str) -> int:
    specs, truth, bias, members, steps, start_c, start_p = _simulate_spec(cfg)
    seed = cfg.get("seed", 0)
    biased = bias.apply(truth)
    os.makedirs(out_dir, exist_ok=True)
    tables = {
        "reference_calibration": make_ensemble_table(truth, specs, start_c, steps, [0],
                                                     seed=subseed(seed, 21)),
        "reference_projection": make_ensemble_table(truth, specs, start_p, steps, [0],
                                                    seed=subseed(seed, 22)),
        "model_calibration": make_ensemble_table(biased, specs, start_c, steps, members,
                                                 seed=subseed(seed, 23)),
        "model_projection": make_ensemble_table(biased, specs, start_p, steps, members,
                                                seed=subseed(seed, 24)),
    }
    outputs = []
    for name, table in tables.items():
        path = os.path.join(out_dir, f"{name}.csv")
        write_table_csv(path, table)
        outputs.append(path)
    manifest = {
        "command": "simulate",
        "version": __version__,
        "config": cfg,
        "master_seed": seed,
        "outputs": outputs,
    }
    _write_manifest(os.path.join(out_dir, "manifest_simulate.json"), manifest)
    return EXIT_OK


# -- entry points ----------------------------------------------------------------


def run_pipeline(command: str, config_path: str, **io) -> int:
    """Library entry point mirroring the CLI; returns the exit status."""
    try:
        cfg = _load_config(config_path)
        if command == "simulate":
            return cmd_simulate(cfg, io["out_dir"])
        if command == "fit":
            return cmd_fit(cfg, io["input_path"], io["out_dir"])
        if command == "correct":
            return cmd_correct(cfg, io["method"], io["mp_path"], io["rc_path"],
                               io["mc_path"], io["out_dir"])
        if command == "evaluate":
            return cmd_evaluate(cfg, io["model_path"], io["corrected_path"],
                                io["ref_path"], io["out_dir"])
        raise ConfigError(f"unknown command {command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except VinebcError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="vinebc",
                                     description="Vine-copula bias correction pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate synthetic biased ensembles")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir", required=True)

    p = sub.add_parser("fit", help="fit one vine model per chunk")
    p.add_argument("--config", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output-dir", required=True)

    p = sub.add_parser("correct", help="bias-correct a projection ensemble")
    p.add_argument("--config", required=True)
    p.add_argument("--method", choices=("vbc", "ubc"), default="vbc")
    p.add_argument("--model-projection", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--model-calibration", required=True)
    p.add_argument("--output-dir", required=True)

    p = sub.add_parser("evaluate", help="metric report for a corrected ensemble")
    p.add_argument("--config", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--corrected", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--output-dir", required=True)

    args = parser.parse_args(argv)
    if args.command == "simulate":
        return run_pipeline("simulate", args.config, out_dir=args.output_dir)
    if args.command == "fit":
        return run_pipeline("fit", args.config, input_path=args.input, out_dir=args.output_dir)
    if args.command == "correct":
        return run_pipeline(
            "correct",
            args.config,
            method=args.method,
            mp_path=args.model_projection,
            rc_path=args.reference,
            mc_path=args.model_calibration,
            out_dir=args.output_dir,
        )
    return run_pipeline(
        "evaluate",
        args.config,
        model_path=args.model,
        corrected_path=args.corrected,
        ref_path=args.reference,
        out_dir=args.output_dir,
    )


if __name__ == "__main__":
    sys.exit(main())
