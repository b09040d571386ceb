"""Batch command-line front-end.

Subcommands: ingest, crop, metrics, scaling, diffuse. Every command reads
an optional ``--config`` JSON file (keyed by command name) that individual
flags override, echoes the effective configuration into the output
directory, and derives all randomness from one root seed through named
substreams. Report paths render matplotlib figures next to the delimited
outputs.

Exit codes: 0 success, 1 internal error, 2 usage or config error,
3 completed with warnings.
"""

from __future__ import annotations

import json
import multiprocessing
import sys
from pathlib import Path

import click

from .canonical import dump_deterministic, from_canonical_json, to_canonical_json
from .cif import parse_cif
from .crop import (
    CropParams,
    blocks_from_crop_json,
    centroid_radius_crop,
    knn_crop,
    stochastic_shell_crop,
    to_crop_json,
)
from .curation import CrystalRecord, CurationPolicy, curate
from .diffusion import (
    GaussianMixture,
    karras_schedule,
    reverse_sample,
    sample_diagnostics,
)
from .lattice import SupercellSpec, build_supercell, niggli_canonicalize
from .metrics import (
    MetricThresholds,
    aggregate,
    block_from_crystal,
    evaluate_sample,
    reference_cluster,
    report_csv,
    report_json,
)
from .plotting import diffusion_figure, metrics_figure, scaling_figure
from .rng import substream
from .scaling import (
    SyntheticLatticeSpec,
    fit_json,
    fit_scaling_exponent,
    run_scaling_sweep,
    sweep_csv,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_WARNINGS = 3


def _load_config(path: str | None, command: str) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise click.UsageError(f"cannot read config: {err}")
    if not isinstance(doc, dict):
        raise click.UsageError("config must be a JSON object")
    section = doc.get(command, {})
    if not isinstance(section, dict):
        raise click.UsageError(f"config section {command!r} must be an object")
    return section


def _effective(defaults: dict, config: dict, overrides: dict) -> dict:
    unknown = set(config) - set(defaults)
    if unknown:
        raise click.UsageError(
            f"unknown config keys: {', '.join(sorted(unknown))}")
    merged = dict(defaults)
    merged.update(config)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return merged


def _write_effective(out: Path, command: str, cfg: dict) -> None:
    doc = {"command": command, "config": cfg}
    (out / "effective_config.json").write_bytes(dump_deterministic(doc) + b"\n")


def _parse_seeds(text: str) -> list[int]:
    text = text.strip()
    if ":" in text:
        lo, hi = text.split(":", 1)
        return list(range(int(lo), int(hi)))
    return [int(tok) for tok in text.split(",") if tok]


@click.group()
def main():
    """Molecular-crystal data toolkit."""


# ---------------------------------------------------------------------------
# ingest


@main.command()
@click.argument("inputs", nargs=-1, type=click.Path())
@click.option("--out", type=click.Path(), default="ingest_out",
              show_default=True)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--max-r-factor", type=float, default=None)
@click.option("--max-heavy-atoms", type=int, default=None)
def ingest(inputs, out, config_path, max_r_factor, max_heavy_atoms):
    """Parse CIF or canonical JSON files into a curated canonical corpus."""
    if not inputs:
        click.echo("no inputs", err=True)
        sys.exit(EXIT_USAGE)
    cfg = _effective(
        {"max_r_factor": 9.0, "max_heavy_atoms": 250},
        _load_config(config_path, "ingest"),
        {"max_r_factor": max_r_factor, "max_heavy_atoms": max_heavy_atoms},
    )
    policy = CurationPolicy(max_r_factor=cfg["max_r_factor"],
                            max_heavy_atoms_per_cell=cfg["max_heavy_atoms"])
    out_dir = Path(out)
    corpus = out_dir / "corpus"
    corpus.mkdir(parents=True, exist_ok=True)

    rows = ["file,provenance,status,reason"]
    n_accepted = 0
    for item in inputs:
        path = Path(item)
        try:
            text = path.read_text()
            if path.suffix == ".json":
                record = CrystalRecord(from_canonical_json(text), path.stem)
            else:
                record = parse_cif(text, provenance=path.stem)
        except Exception as err:  # per-file failure: report and continue
            rows.append(f"{path.name},,error,{type(err).__name__}: {err}")
            continue
        decision = curate(record, policy)
        if not decision:
            rows.append(f"{path.name},{record.provenance},rejected,"
                        f"{decision.reason}")
            continue
        canonical = niggli_canonicalize(record.crystal)
        (corpus / f"{record.provenance}.json").write_bytes(
            to_canonical_json(canonical))
        rows.append(f"{path.name},{record.provenance},accepted,")
        n_accepted += 1

    (out_dir / "report.csv").write_text("\n".join(rows) + "\n")
    _write_effective(out_dir, "ingest", cfg)
    click.echo(f"accepted {n_accepted} of {len(inputs)}")
    sys.exit(EXIT_OK if n_accepted >= 1 else EXIT_ERROR)


# ---------------------------------------------------------------------------
# crop


def _crop_one(args):
    (path_text, method, r_cut, t_max, p_max, radius, seed) = args
    crystal = from_canonical_json(path_text)
    cell = build_supercell(crystal, SupercellSpec.diagonal(3))
    if method == "s4":
        crop = stochastic_shell_crop(
            cell, CropParams(r_cut=r_cut, t_max=t_max, p_max=p_max, seed=seed))
    else:
        asu = cell.asu_molecule_indices
        center = asu[int(substream(seed, "center").integers(len(asu)))]
        if method == "knn":
            crop = knn_crop(cell, center, t_max=t_max)
        else:
            crop = centroid_radius_crop(cell, center, radius=radius,
                                        t_max=t_max)
    return to_crop_json(crop, cell), crop.shell_of, [
        cell.molecules[m].entity_id for m in crop.molecule_indices]


@main.command()
@click.option("--corpus", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), default="crops", show_default=True)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--method", type=click.Choice(["s4", "knn", "centroid_radius"]),
              default=None)
@click.option("--r-cut", type=float, default=None)
@click.option("--t-max", type=int, default=None)
@click.option("--p-max", type=float, default=None)
@click.option("--radius", type=float, default=None)
@click.option("--seeds", type=str, default=None,
              help="comma list or lo:hi range")
@click.option("--stats", is_flag=True, default=False)
@click.option("--parallelism", type=int, default=1, show_default=True)
def crop(corpus, out, config_path, method, r_cut, t_max, p_max, radius,
         seeds, stats, parallelism):
    """Cut training crops from every crystal in a canonical corpus."""
    cfg = _effective(
        {"method": "s4", "r_cut": 4.5, "t_max": 640, "p_max": 0.8,
         "radius": 15.0, "seeds": "0:1"},
        _load_config(config_path, "crop"),
        {"method": method, "r_cut": r_cut, "t_max": t_max, "p_max": p_max,
         "radius": radius, "seeds": seeds},
    )
    seed_list = _parse_seeds(cfg["seeds"])
    files = sorted(Path(corpus).glob("*.json"))
    if not files:
        click.echo("corpus is empty", err=True)
        sys.exit(EXIT_USAGE)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)

    jobs = []
    names = []
    for path in files:
        text = path.read_text()
        for seed in seed_list:
            jobs.append((text, cfg["method"], cfg["r_cut"], cfg["t_max"],
                         cfg["p_max"], cfg["radius"], seed))
            names.append(f"{path.stem}__s{seed}.crop.json")

    rows = ["crop,status,detail"]
    shell_hist: dict[int, int] = {}
    entity_hist: dict[str, int] = {}
    results = _ordered_map(_crop_one_safe, jobs, parallelism)
    n_written = 0
    for name, result in zip(names, results):
        if isinstance(result, str):  # recorded error, run continues
            rows.append(f"{name},error,{result}")
            continue
        blob, shells, entities = result
        (out_dir / name).write_bytes(blob)
        rows.append(f"{name},ok,")
        n_written += 1
        for s in shells:
            shell_hist[s] = shell_hist.get(s, 0) + 1
        for e in entities:
            entity_hist[e] = entity_hist.get(e, 0) + 1

    (out_dir / "report.csv").write_text("\n".join(rows) + "\n")
    _write_effective(out_dir, "crop", cfg)
    if stats:
        doc = {
            "shell_histogram": {str(k): shell_hist[k]
                                for k in sorted(shell_hist)},
            "stoichiometry_histogram": {k: entity_hist[k]
                                        for k in sorted(entity_hist)},
        }
        (out_dir / "stats.json").write_bytes(dump_deterministic(doc) + b"\n")
    click.echo(f"wrote {n_written} crops")
    sys.exit(EXIT_OK if n_written else EXIT_ERROR)


def _crop_one_safe(args):
    try:
        return _crop_one(args)
    except Exception as err:
        return f"{type(err).__name__}: {err}"


def _ordered_map(fn, jobs, parallelism):
    if parallelism <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with multiprocessing.Pool(parallelism) as pool:
        return pool.map(fn, jobs)


# ---------------------------------------------------------------------------
# metrics


@main.command()
@click.option("--pred", type=click.Path(exists=True), required=True)
@click.option("--gt", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), default="metrics_out",
              show_default=True)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--samples", type=int, default=None,
              help="subsample this many predictions per target")
@click.option("--seed", type=int, default=None)
@click.option("--collision-slack", type=float, default=None)
@click.option("--rec-rmsd1", type=float, default=None)
@click.option("--sol-rmsd15", type=float, default=None)
@click.option("--pac-min-matched", type=int, default=None)
@click.option("--cluster-size", type=int, default=None)
def metrics(pred, gt, out, config_path, samples, seed, collision_slack,
            rec_rmsd1, sol_rmsd15, pac_min_matched, cluster_size):
    """Evaluate predicted blocks against ground-truth crystals."""
    cfg = _effective(
        {"samples": 0, "seed": 0, "collision_slack": 0.7, "rec_rmsd1": 0.5,
         "sol_rmsd15": 2.0, "pac_min_matched": 8, "cluster_size": 15},
        _load_config(config_path, "metrics"),
        {"samples": samples, "seed": seed, "collision_slack": collision_slack,
         "rec_rmsd1": rec_rmsd1, "sol_rmsd15": sol_rmsd15,
         "pac_min_matched": pac_min_matched, "cluster_size": cluster_size},
    )
    thresholds = MetricThresholds(
        collision_slack=cfg["collision_slack"], rec_rmsd1=cfg["rec_rmsd1"],
        sol_rmsd15=cfg["sol_rmsd15"], pac_min_matched=cfg["pac_min_matched"],
        cluster_size=cfg["cluster_size"])

    gt_files = {p.stem: p for p in sorted(Path(gt).glob("*.json"))
                if p.name != "effective_config.json"}
    pred_files = sorted(Path(pred).glob("*.crop.json"))
    if not pred_files:
        click.echo("prediction directory is empty", err=True)
        sys.exit(EXIT_ERROR)

    by_target: dict[str, list[Path]] = {}
    warnings_list = []
    for p in pred_files:
        target = p.name.split("__", 1)[0].removesuffix(".crop.json")
        if target not in gt_files:
            warnings_list.append(f"unmatched prediction id: {p.name}")
            continue
        by_target.setdefault(target, []).append(p)

    if not by_target:
        click.echo("no prediction matches any target", err=True)
        sys.exit(EXIT_ERROR)

    all_flags = []
    for target in sorted(by_target):
        crystal = from_canonical_json(gt_files[target].read_text())
        cluster = reference_cluster(crystal, size=cfg["cluster_size"])
        seen = set()
        conformers = []
        for mol_idx in crystal.asu_molecule_indices:
            ent = crystal.molecules[mol_idx].entity_id
            if ent not in seen:
                seen.add(ent)
                conformers.append(block_from_crystal(crystal, mol_idx))
        paths = by_target[target]
        if cfg["samples"] and len(paths) > cfg["samples"]:
            rng = substream(cfg["seed"], "subsample", target)
            picked = rng.choice(len(paths), size=cfg["samples"],
                                replace=False)
            paths = [paths[i] for i in sorted(picked)]
        for path in paths:
            blocks = blocks_from_crop_json(path.read_text())
            all_flags.append(evaluate_sample(
                blocks, cluster, conformers, target, thresholds))

    record = aggregate(all_flags)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_bytes(report_json(record, all_flags))
    (out_dir / "report.csv").write_text(report_csv(record))
    metrics_figure(record, out_dir / "metrics.png")
    _write_effective(out_dir, "metrics", cfg)
    for w in warnings_list:
        click.echo(f"warning: {w}", err=True)
    click.echo(report_csv(record).strip())
    sys.exit(EXIT_WARNINGS if warnings_list else EXIT_OK)


# ---------------------------------------------------------------------------
# scaling


_SCALING_DEFAULTS = {
    "kind": "simple_cubic",
    "spacing": 4.0,
    "extent": 19,
    "atoms_per_molecule": 1,
    "crop_method": "S4",
    "r_cut_values": [4.5],
    "r0_values": None,
    "token_targets": [30, 60, 120, 240, 480, 960, 1920],
    "seeds": "0:32",
    "p_max": 0.8,
}


def _scaling_worker(args):
    cfg, seed = args
    spec = SyntheticLatticeSpec(
        kind=cfg["kind"], spacing=cfg["spacing"], extent=cfg["extent"],
        atoms_per_molecule=cfg["atoms_per_molecule"])
    return run_scaling_sweep(
        spec, cfg["crop_method"], tuple(cfg["r_cut_values"]),
        tuple(cfg["token_targets"]), seeds=(seed,),
        r0_values=(tuple(cfg["r0_values"]) if cfg["r0_values"] else None),
        p_max=cfg["p_max"])


@main.command()
@click.option("--spec-file", type=click.Path(), default=None,
              help="JSON overriding the default sweep configuration")
@click.option("--out", type=click.Path(), default="scaling_out",
              show_default=True)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--dry-run", is_flag=True, default=False)
@click.option("--parallelism", type=int, default=1, show_default=True)
def scaling(spec_file, out, config_path, dry_run, parallelism):
    """Run the boundary-loss scaling sweep and fit the exponent."""
    file_cfg = {}
    if spec_file is not None:
        try:
            file_cfg = json.loads(Path(spec_file).read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise click.UsageError(f"cannot read spec file: {err}")
    cfg = _effective(_SCALING_DEFAULTS, _load_config(config_path, "scaling"),
                     file_cfg)
    seed_list = (_parse_seeds(cfg["seeds"]) if isinstance(cfg["seeds"], str)
                 else [int(s) for s in cfg["seeds"]])

    n_cells = (len(cfg["r_cut_values"])
               * len(cfg["r0_values"] or cfg["r_cut_values"])
               * len(cfg["token_targets"]) * len(seed_list))
    if dry_run:
        click.echo(f"lattice: {cfg['kind']} spacing {cfg['spacing']} "
                   f"extent {cfg['extent']}")
        click.echo(f"method {cfg['crop_method']}, r_cut {cfg['r_cut_values']}, "
                   f"r0 {cfg['r0_values'] or cfg['r_cut_values']}, "
                   f"targets {cfg['token_targets']}, "
                   f"{len(seed_list)} seeds -> {n_cells} points")
        sys.exit(EXIT_OK)

    per_seed = _ordered_map(_scaling_worker,
                            [(cfg, s) for s in seed_list], parallelism)
    # reassemble into the canonical (r_cut, r0, target, seed) order
    points = []
    per_seed_iters = [iter(chunk) for chunk in per_seed]
    n_blocks = (len(cfg["r_cut_values"])
                * len(cfg["r0_values"] or cfg["r_cut_values"])
                * len(cfg["token_targets"]))
    for _ in range(n_blocks):
        for it in per_seed_iters:
            points.append(next(it))

    fit = fit_scaling_exponent(points)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_text = sweep_csv(points)
    (out_dir / "sweep.csv").write_text(csv_text)
    # gnuplot-ready: same rows, whitespace separated, no header
    dat = "\n".join(line.replace(",", " ")
                    for line in csv_text.splitlines()[1:]) + "\n"
    (out_dir / "sweep.dat").write_text(dat)
    (out_dir / "fit.json").write_bytes(fit_json(fit))
    scaling_figure(points, fit, out_dir / "scaling.png")
    _write_effective(out_dir, "scaling", cfg)
    click.echo(f"slope {fit.slope:.4f} r_squared {fit.r_squared:.4f} "
               f"({fit.n_points} points)")
    sys.exit(EXIT_OK)


# ---------------------------------------------------------------------------
# diffuse


_DIFFUSE_DEFAULTS = {
    "weights": [0.5, 0.5],
    "means": [[-10.0, 0.0], [10.0, 0.0]],
    "stdevs": [0.5, 0.5],
    "steps": 200,
    "sigma_min": 0.02,
    "sigma_max": 200.0,
    "rho": 7.0,
    "n": 10000,
    "seed": 0,
    "method": "em",
}

_METHOD_NAMES = {"em": "euler_maruyama", "ode": "probability_flow_ode",
                 "churn": "churn"}


@main.command()
@click.option("--gmm-spec", type=click.Path(), default=None,
              help="JSON with weights/means/stdevs and sampler settings")
@click.option("--out", type=click.Path(), default="diffuse_out",
              show_default=True)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--steps", type=int, default=None)
@click.option("--sigma-min", type=float, default=None)
@click.option("--sigma-max", type=float, default=None)
@click.option("--rho", type=float, default=None)
@click.option("--n", "n_samples", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--method", type=click.Choice(["em", "ode", "churn"]),
              default=None)
def diffuse(gmm_spec, out, config_path, steps, sigma_min, sigma_max, rho,
            n_samples, seed, method):
    """Sample a Gaussian-mixture target through the reverse-time process."""
    file_cfg = {}
    if gmm_spec is not None:
        try:
            file_cfg = json.loads(Path(gmm_spec).read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise click.UsageError(f"cannot read gmm spec: {err}")
    cfg = _effective(_DIFFUSE_DEFAULTS, _load_config(config_path, "diffuse"),
                     file_cfg)
    cfg = _effective(cfg, {}, {"steps": steps, "sigma_min": sigma_min,
                               "sigma_max": sigma_max, "rho": rho,
                               "n": n_samples, "seed": seed,
                               "method": method})
    try:
        target = GaussianMixture(cfg["weights"], cfg["means"], cfg["stdevs"])
        schedule = karras_schedule(cfg["steps"], cfg["sigma_min"],
                                   cfg["sigma_max"], cfg["rho"])
    except ValueError as err:
        raise click.UsageError(str(err))

    samples = reverse_sample(target, schedule, cfg["n"], seed=cfg["seed"],
                             method=_METHOD_NAMES[cfg["method"]])
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)

    header = ",".join(f"x{k}" for k in range(target.dimension))
    lines = [header]
    for row in samples:
        lines.append(",".join(f"{v:.12g}" for v in row))
    (out_dir / "samples.csv").write_text("\n".join(lines) + "\n")

    diag = sample_diagnostics(samples, target)
    diag["config"] = cfg
    (out_dir / "diagnostics.json").write_bytes(dump_deterministic(diag) + b"\n")
    if len(samples):
        diffusion_figure(samples, target.means, out_dir / "diffusion.png")
    _write_effective(out_dir, "diffuse", cfg)
    click.echo(f"wrote {len(samples)} samples")
    sys.exit(EXIT_OK)


if __name__ == "__main__":
    main()
