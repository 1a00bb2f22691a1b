"""Batch command-line pipeline.

Subcommands mirror the evaluation protocol: ``register`` fits the
TRUS-to-MRI transfer for one patient case, ``fuse`` emits composite
checkerboard slices, ``evaluate`` runs the dosimetric comparison of the
original and fusion-revised contour sets, ``stats`` runs the paired
significance tests, ``phantom`` exercises the registration chain on a
synthetic case with known ground truth.

Exit codes: 0 success, 1 numerical failure (non-convergence, failed
inversion), 2 input/manifest error. All emitted files are deterministic
functions of inputs and configuration.
"""

from __future__ import annotations

import functools
import json
import sys
from importlib import resources
from pathlib import Path

import click
import numpy as np

from brachyfuse.dosimetry import (
    check_constraints,
    compare_structures,
    compute_dose_grid,
    compute_dvh,
)
from brachyfuse.errors import InputError, NumericalError
from brachyfuse.fileio import (
    PatientCase,
    load_manifest,
    load_paired_csv,
    load_transfer,
    load_two_column_csv,
    save_composite_pgm,
    save_contour_stack,
    save_dvh_csv,
    save_transfer,
    _write_json,
)
from brachyfuse.fusion import composite_slice, map_mri_contours_to_trus
from brachyfuse.geometry.contours import SurfaceModel, planimetric_volume
from brachyfuse.geometry.grid import GridSpec
from brachyfuse.geometry.voxelize import voxelize
from brachyfuse.registration import (
    RegistrationConfig,
    generate_phantom,
    register_surfaces,
    target_registration_error,
)
from brachyfuse.stats import spearman_rho, wilcoxon_signed_rank

_COHORT_TABLES = ("volumes", "isodose160", "d90")


def _load_config(path) -> dict:
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise InputError(f"no such config file: {path}")
    text = path.read_text()
    if path.suffix == ".json":
        return json.loads(text)
    if path.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(text)
    raise InputError(f"config must be .toml or .json, got {path.suffix!r}")


def _registration_config(cfg: dict) -> RegistrationConfig:
    section = cfg.get("registration", {})
    try:
        return RegistrationConfig().replace(**section)
    except TypeError as err:
        raise InputError(f"bad [registration] config: {err}") from err


def _pipeline_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except InputError as err:
            click.echo(f"error: {err}", err=True)
            sys.exit(2)
        except NumericalError as err:
            click.echo(f"error: {err}", err=True)
            sys.exit(1)

    return wrapper


def _prostate_surfaces(case: PatientCase) -> tuple:
    src = SurfaceModel("TRUS", case.us_contours["prostate"].all_points())
    tgt = SurfaceModel("MRI", case.mri_contours["prostate"].all_points())
    return src, tgt


def _register_case(case: PatientCase, cfg: RegistrationConfig):
    src, tgt = _prostate_surfaces(case)
    return register_surfaces(src, tgt, cfg)


def _registration_report(case: PatientCase, result) -> dict:
    report = {"patient_id": case.patient_id}
    report.update(result.as_dict())
    if case.source_landmarks is not None:
        tre = target_registration_error(
            result.transfer, case.source_landmarks, case.target_landmarks
        )
        report["tre"] = tre.as_dict()
    return report


def _resolve_transfer(case: PatientCase, transfer_path, cfg: RegistrationConfig):
    if transfer_path is not None:
        return load_transfer(transfer_path), None
    result = _register_case(case, cfg)
    return result.transfer, result


def _trus_slice(case: PatientCase, n: int) -> np.ndarray:
    vol = case.trus_volume
    nx, ny, nz = vol.grid.dims
    geom = case.trus_geometry
    if (nx, ny) != (geom.width, geom.height):
        raise InputError(
            f"TRUS volume dims {(nx, ny)} do not match slice geometry "
            f"({geom.width}, {geom.height})"
        )
    if not 0 <= n < nz:
        raise InputError(f"slice {n} outside volume (0..{nz - 1})")
    return vol.values[:, :, n].T


@click.group()
def main():
    """Prostate implant evaluation toolkit: registration, image fusion,
    dosimetry and paired statistics."""


@main.command()
@click.argument("manifest", type=click.Path())
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", "out_dir", type=click.Path(), default="out", show_default=True)
@_pipeline_errors
def register(manifest, config_path, out_dir):
    """Fit the rigid + elastic transfer for one patient case."""
    cfg = _registration_config(_load_config(config_path))
    case = load_manifest(manifest)
    result = _register_case(case, cfg)

    out = Path(out_dir)
    transfer_rel = Path("reports") / f"{case.patient_id}_transfer.json"
    save_transfer(result.transfer, out / transfer_rel)
    report = _registration_report(case, result)
    report["transfer_path"] = str(transfer_rel)
    _write_json(report, out / "reports" / f"{case.patient_id}_register.json")

    click.echo(
        f"{case.patient_id}: residual mean {result.residual_stats.mean:.3f} mm "
        f"(rigid {result.rigid_residual_stats.mean:.3f} mm), "
        f"levels {result.iterations_per_level}"
    )
    if not result.converged:
        click.echo("registration did not converge within budget", err=True)
        sys.exit(1)


@main.command()
@click.argument("manifest", type=click.Path())
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", "out_dir", type=click.Path(), default="out", show_default=True)
@click.option("--transfer", "transfer_path", type=click.Path(), default=None,
              help="Reuse a saved transfer instead of re-registering.")
@click.option("--cursor", "cursors", multiple=True,
              help="Quadrant cursor 'u,v' in pixels (repeatable; default center).")
@click.option("--slices", "slice_spec", default="all", show_default=True,
              help="Comma-separated slice indices, or 'all'.")
@click.option("--layout", default="tl-br", show_default=True,
              type=click.Choice(["tl-br", "tr-bl"]))
@_pipeline_errors
def fuse(manifest, config_path, out_dir, transfer_path, cursors, slice_spec, layout):
    """Write composite TRUS/MRI checkerboard slices as 16-bit PGM."""
    cfg_dict = _load_config(config_path)
    case = load_manifest(manifest)
    f, _ = _resolve_transfer(case, transfer_path, _registration_config(cfg_dict))

    geom = case.trus_geometry
    if cursors:
        parsed = []
        for c in cursors:
            parts = c.split(",")
            if len(parts) != 2:
                raise InputError(f"cursor must be 'u,v', got {c!r}")
            parsed.append((float(parts[0]), float(parts[1])))
    else:
        parsed = [(geom.width / 2.0, geom.height / 2.0)]

    if slice_spec == "all":
        slice_ids = list(range(case.trus_volume.grid.dims[2]))
    else:
        slice_ids = [int(s) for s in slice_spec.split(",")]

    out = Path(out_dir)
    entries = []
    for n in slice_ids:
        img = _trus_slice(case, n)
        for k, cursor in enumerate(parsed):
            comp = composite_slice(img, geom, n, case.mri_volume, f, cursor, layout)
            rel = Path("composite") / f"{case.patient_id}_s{n:03d}_c{k}"
            save_composite_pgm(comp, out / rel)
            entries.append(
                {
                    "slice_index": n,
                    "cursor": list(comp.cursor),
                    "out_of_bounds_count": comp.out_of_bounds_count,
                    "image": str(rel) + ".pgm",
                }
            )
    _write_json(
        {"patient_id": case.patient_id, "layout": layout, "composites": entries},
        out / "reports" / f"{case.patient_id}_fuse.json",
    )
    click.echo(f"{case.patient_id}: wrote {len(entries)} composite slice(s)")


@main.command()
@click.argument("manifest", type=click.Path())
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", "out_dir", type=click.Path(), default="out", show_default=True)
@click.option("--transfer", "transfer_path", type=click.Path(), default=None)
@_pipeline_errors
def evaluate(manifest, config_path, out_dir, transfer_path):
    """Dosimetric comparison of original vs fusion-revised contours."""
    cfg_dict = _load_config(config_path)
    case = load_manifest(manifest)
    if case.seed_plan is None:
        raise InputError("manifest field 'seed_plan' is required for evaluate")
    eval_cfg = cfg_dict.get("evaluate", {})
    spacing = float(eval_cfg.get("grid_spacing_mm", 1.0))
    margin = float(eval_cfg.get("grid_margin_mm", 5.0))
    bin_width = float(eval_cfg.get("bin_width_gy", 0.8))

    f, reg_result = _resolve_transfer(case, transfer_path, _registration_config(cfg_dict))

    out = Path(out_dir)
    # pre-op contours transported into the intra-op frame through f^-1
    fused = {
        name: map_mri_contours_to_trus(stack, f, case.trus_geometry)
        for name, stack in case.mri_contours.items()
    }
    for name, stack in sorted(fused.items()):
        save_contour_stack(
            stack, out / "reports" / f"{case.patient_id}_fused_{name}_contours.json"
        )

    all_stacks = list(case.us_contours.values()) + list(fused.values())
    lo = np.min([s.bounds()[0] for s in all_stacks], axis=0)
    hi = np.max([s.bounds()[1] for s in all_stacks], axis=0)
    grid = GridSpec.from_bounds(lo, hi, spacing, pad=margin)

    rows = compare_structures(
        case.us_contours, fused, case.seed_plan, grid, case.patient_id, bin_width
    )
    dose = compute_dose_grid(case.seed_plan, grid)

    dvh_paths = {}
    constraints = {}
    failures = {}
    for label, structs in (("us", case.us_contours), ("fused", fused)):
        dvhs = {}
        for name, stack in sorted(structs.items()):
            try:
                dvhs[name] = compute_dvh(dose, voxelize(stack, grid, name), bin_width)
            except InputError as err:
                failures[f"{label}.{name}"] = str(err)
        for name, dvh in dvhs.items():
            rel = Path("dvh") / f"{case.patient_id}_{label}_{name}.csv"
            save_dvh_csv(dvh, out / rel)
            dvh_paths[f"{label}.{name}"] = str(rel)
        constraints[label] = check_constraints(
            dvhs.get("prostate"), dvhs.get("urethra"), dvhs.get("rectum")
        ).as_dict()

    report = {
        "patient_id": case.patient_id,
        "paired_rows": [row.as_dict() for row in rows],
        "volume_cc": {
            "us": planimetric_volume(case.us_contours["prostate"]),
            "fused": planimetric_volume(fused["prostate"]),
        },
        "constraints": constraints,
        "dvh_files": dvh_paths,
        "failures": failures,
    }
    if reg_result is not None:
        report["registration"] = reg_result.as_dict()
    _write_json(report, out / "reports" / f"{case.patient_id}_evaluate.json")

    for row in rows:
        click.echo(
            f"{case.patient_id} {row.metric}: us {row.us_value:.2f} "
            f"fused {row.fused_value:.2f} diff {row.diff:+.2f} ({row.percent:+.2f}%)"
        )


def _bundled_table(name: str) -> Path:
    ref = resources.files("brachyfuse").joinpath(f"data/cohort/{name}.csv")
    with resources.as_file(ref) as concrete:
        return Path(concrete)


@main.command()
@click.argument("tables", nargs=-1, type=click.Path())
@click.option("--out", "out_dir", type=click.Path(), default="out", show_default=True)
@click.option("--zero-method", default="wilcox", show_default=True,
              type=click.Choice(["wilcox", "pratt"]))
@_pipeline_errors
def stats(tables, out_dir, zero_method):
    """Exact Wilcoxon per table plus Spearman across the first two.

    With no arguments, runs on the bundled cohort tables.
    """
    if tables:
        paths = [Path(t) for t in tables]
    else:
        paths = [_bundled_table(name) for name in _COHORT_TABLES]

    results = {}
    diff_columns = []
    for path in paths:
        try:
            table = load_paired_csv(path)
            pairs = list(zip(table.us, table.fused))
            diffs = table.fused - table.us
            meta = table.meta
        except InputError:
            a, b = load_two_column_csv(path)
            pairs = list(zip(a, b))
            diffs = b - a
            meta = {}
        wres = wilcoxon_signed_rank(pairs, zero_method=zero_method)
        results[path.stem] = {"wilcoxon": wres.as_dict(), "meta": meta}
        diff_columns.append(diffs)
        verdict = "significant" if wres.significant_at_0_05 else "not significant"
        click.echo(f"{path.stem}: W={wres.w:g} p={wres.p_value:.4f} ({verdict})")

    payload = {"tables": results}
    if len(diff_columns) >= 2:
        srho = spearman_rho(diff_columns[0], diff_columns[1])
        payload["spearman"] = srho.as_dict()
        click.echo(f"spearman(diff[0], diff[1]): rho={srho.rho:.4f}")
    _write_json(payload, Path(out_dir) / "reports" / "stats.json")


@main.command()
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True)
@click.option("--amplitude", type=float, default=3.0, show_default=True,
              help="Peak ground-truth deformation (mm).")
@click.option("--noise", type=float, default=0.3, show_default=True,
              help="Target sampling noise sd (mm).")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", "out_dir", type=click.Path(), default="out", show_default=True)
@_pipeline_errors
def phantom(seed, amplitude, noise, config_path, out_dir):
    """Register a synthetic phantom with known ground truth."""
    cfg = _registration_config(_load_config(config_path))
    case = generate_phantom(seed, amplitude_mm=amplitude, noise_sd_mm=noise)
    result = register_surfaces(case.source, case.target, cfg)
    tre = target_registration_error(
        result.transfer, case.source_landmarks, case.target_landmarks
    )

    out = Path(out_dir)
    transfer_rel = Path("reports") / f"phantom_{seed}_transfer.json"
    save_transfer(result.transfer, out / transfer_rel)
    report = {
        "seed": seed,
        "amplitude_mm": amplitude,
        "noise_sd_mm": noise,
        "semi_axes_mm": list(case.semi_axes),
        "tre": tre.as_dict(),
        "transfer_path": str(transfer_rel),
    }
    report.update(result.as_dict())
    _write_json(report, out / "reports" / f"phantom_{seed}_register.json")
    click.echo(
        f"phantom seed={seed}: residual mean {result.residual_stats.mean:.3f} mm, "
        f"TRE mean {tre.mean:.3f} mm"
    )
    if not result.converged:
        click.echo("registration did not converge within budget", err=True)
        sys.exit(1)


if __name__ == "__main__":
    main()
