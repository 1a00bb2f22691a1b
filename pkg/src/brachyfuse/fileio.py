"""Readers and writers for the on-disk artifact formats.

All JSON payloads are written with sorted keys and a trailing newline so
repeated runs emit byte-identical files. Binary rasters are raw arrays
next to a JSON header describing shape and layout; the flat order is
x-fastest (index = x + nx*(y + ny*z)).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from brachyfuse.dosimetry import DVHCurve, Seed, SeedPlan, SourceModel
from brachyfuse.errors import InputError, ManifestError
from brachyfuse.fusion import CompositeImage, ScalarVolume, SliceGeometry
from brachyfuse.geometry.contours import Contour, ContourStack
from brachyfuse.geometry.grid import GridSpec, StructureMask
from brachyfuse.registration.ffd import TransferFunction

PGM_MAXVAL = 65535


def _write_json(payload: dict, path: Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _read_json(path: Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise InputError(f"no such file: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise InputError(f"{path} is not valid JSON: {err}") from err


# ---------------------------------------------------------------- contours


def contour_stack_to_dict(stack: ContourStack) -> dict:
    return {
        "structure": stack.structure_name,
        "frame": stack.frame,
        "slice_spacing_mm": stack.slice_spacing_mm,
        "contours": [
            {
                "slice_index": c.slice_index,
                "z_mm": c.z_mm,
                "vertices": c.vertices.tolist(),
            }
            for c in stack.contours
        ],
    }


def contour_stack_from_dict(payload: dict) -> ContourStack:
    for key in ("structure", "frame", "slice_spacing_mm", "contours"):
        if key not in payload:
            raise InputError(f"contour stack payload lacks {key!r}")
    contours = [
        Contour(entry["slice_index"], entry["z_mm"], np.asarray(entry["vertices"]))
        for entry in payload["contours"]
    ]
    return ContourStack(
        payload["structure"], payload["frame"], payload["slice_spacing_mm"], contours
    )


def save_contour_stack(stack: ContourStack, path):
    _write_json(contour_stack_to_dict(stack), path)


def load_contour_stack(path) -> ContourStack:
    return contour_stack_from_dict(_read_json(path))


# --------------------------------------------------------------- seed plan


def seed_plan_to_dict(plan: SeedPlan) -> dict:
    src = plan.source
    phi = src.phi
    return {
        "plan_id": plan.plan_id,
        "source": {
            "radionuclide": src.radionuclide,
            "lambda": src.lambda_cgy_per_h_per_u,
            "half_life_days": src.half_life_days,
            "g_table": np.asarray(src.g_table).tolist(),
            "phi_table": phi.tolist() if isinstance(phi, np.ndarray) else float(phi),
        },
        "seeds": [
            {
                "x": s.position[0],
                "y": s.position[1],
                "z": s.position[2],
                "sk": s.sk_u,
            }
            for s in plan.seeds
        ],
    }


def seed_plan_from_dict(payload: dict) -> SeedPlan:
    for key in ("plan_id", "seeds"):
        if key not in payload:
            raise InputError(f"seed plan payload lacks {key!r}")
    src_payload = payload.get("source", {})
    kwargs = {}
    if "radionuclide" in src_payload:
        kwargs["radionuclide"] = src_payload["radionuclide"]
    if "lambda" in src_payload:
        kwargs["lambda_cgy_per_h_per_u"] = float(src_payload["lambda"])
    if "half_life_days" in src_payload:
        kwargs["half_life_days"] = float(src_payload["half_life_days"])
    if src_payload.get("g_table") is not None:
        kwargs["g_table"] = np.asarray(src_payload["g_table"], dtype=float)
    phi = src_payload.get("phi_table")
    if phi is not None:
        kwargs["phi"] = float(phi) if np.isscalar(phi) else np.asarray(phi, dtype=float)
    source = SourceModel(**kwargs)
    seeds = [
        Seed(np.array([s["x"], s["y"], s["z"]], dtype=float), float(s["sk"]))
        for s in payload["seeds"]
    ]
    return SeedPlan(payload["plan_id"], seeds, source)


def save_seed_plan(plan: SeedPlan, path):
    _write_json(seed_plan_to_dict(plan), path)


def load_seed_plan(path) -> SeedPlan:
    return seed_plan_from_dict(_read_json(path))


# ----------------------------------------------------------- raw volumes

# image volumes: raw little-endian u16; masks: raw u8; both x-fastest


def _grid_header(grid: GridSpec) -> dict:
    return {
        "dims": list(grid.dims),
        "spacing_mm": list(grid.spacing),
        "origin_mm": list(grid.origin),
        "flat_order": "x-fastest",
    }


def _grid_from_header(payload: dict, path) -> GridSpec:
    for key in ("dims", "spacing_mm", "origin_mm"):
        if key not in payload:
            raise InputError(f"{path} header lacks {key!r}")
    return GridSpec(payload["dims"], payload["spacing_mm"], payload["origin_mm"])


def _raster_paths(base) -> tuple:
    base = Path(base)
    return base.parent / (base.name + ".raw"), base.parent / (base.name + ".json")


def save_volume(volume: ScalarVolume, base):
    values = np.asarray(volume.values)
    if np.issubdtype(values.dtype, np.floating):
        if not np.all(values == np.floor(values)):
            raise InputError("volume intensities must be integral to store as u16")
    if values.size and (values.min() < 0 or values.max() > PGM_MAXVAL):
        raise InputError("volume intensities must fit in u16")
    raw_path, json_path = _raster_paths(base)
    raw_path.parent.mkdir(parents=True, exist_ok=True)
    header = _grid_header(volume.grid)
    header.update({"dtype": "uint16", "byte_order": "little"})
    raw_path.write_bytes(values.astype("<u2").ravel(order="F").tobytes())
    _write_json(header, json_path)


def load_volume(base) -> ScalarVolume:
    raw_path, json_path = _raster_paths(base)
    header = _read_json(json_path)
    grid = _grid_from_header(header, json_path)
    if header.get("dtype", "uint16") != "uint16":
        raise InputError(f"{json_path}: unsupported dtype {header['dtype']!r}")
    if not raw_path.exists():
        raise InputError(f"no such file: {raw_path}")
    flat = np.frombuffer(raw_path.read_bytes(), dtype="<u2")
    expected = int(np.prod(grid.dims))
    if flat.size != expected:
        raise InputError(
            f"{raw_path}: expected {expected} voxels, found {flat.size}"
        )
    return ScalarVolume(grid, flat.reshape(grid.dims, order="F"))


def save_mask(mask: StructureMask, base):
    raw_path, json_path = _raster_paths(base)
    raw_path.parent.mkdir(parents=True, exist_ok=True)
    header = _grid_header(mask.grid)
    header.update({"dtype": "uint8", "structure": mask.structure_name})
    raw_path.write_bytes(mask.inside.astype(np.uint8).ravel(order="F").tobytes())
    _write_json(header, json_path)


def load_mask(base) -> StructureMask:
    raw_path, json_path = _raster_paths(base)
    header = _read_json(json_path)
    grid = _grid_from_header(header, json_path)
    flat = np.frombuffer(raw_path.read_bytes(), dtype=np.uint8)
    if flat.size != int(np.prod(grid.dims)):
        raise InputError(f"{raw_path}: voxel count mismatch")
    return StructureMask(
        grid, flat.reshape(grid.dims, order="F") > 0, header.get("structure", "structure")
    )


# ------------------------------------------------------------- transfer fn


def save_transfer(transfer: TransferFunction, path):
    _write_json(transfer.to_dict(), path)


def load_transfer(path) -> TransferFunction:
    return TransferFunction.from_dict(_read_json(path))


# -------------------------------------------------------------------- DVH


def save_dvh_csv(dvh: DVHCurve, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["dose_gy,fraction_pct,cc"]
    for edge, frac in zip(dvh.dose_edges_gy, dvh.fraction_pct):
        cc = frac / 100.0 * dvh.total_volume_cc
        lines.append(f"{edge:.10g},{frac:.10g},{cc:.10g}")
    path.write_text("\n".join(lines) + "\n")


def load_dvh_csv(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise InputError(f"no such file: {path}")
    rows = [line.split(",") for line in path.read_text().strip().splitlines()[1:]]
    data = np.array(rows, dtype=float)
    return {"dose_gy": data[:, 0], "fraction_pct": data[:, 1], "cc": data[:, 2]}


# ------------------------------------------------------------- PGM output


def save_composite_pgm(image: CompositeImage, base):
    """16-bit binary PGM (big-endian samples per the format) plus a JSON
    sidecar carrying cursor, layout and the out-of-bounds count."""
    base = Path(base)
    pgm_path = base.parent / (base.name + ".pgm")
    json_path = base.parent / (base.name + ".json")
    pgm_path.parent.mkdir(parents=True, exist_ok=True)
    pix = np.asarray(image.pixels)
    rounded = np.rint(pix)
    if rounded.min() < 0 or rounded.max() > PGM_MAXVAL:
        raise InputError("composite intensities do not fit in 16-bit PGM")
    h, w = rounded.shape
    header = f"P5\n{w} {h}\n{PGM_MAXVAL}\n".encode("ascii")
    pgm_path.write_bytes(header + rounded.astype(">u2").tobytes())
    _write_json(
        {
            "cursor": list(image.cursor),
            "layout": image.layout,
            "out_of_bounds_count": image.out_of_bounds_count,
            "slice_index": image.slice_index,
            "width": w,
            "height": h,
        },
        json_path,
    )


def load_pgm(path) -> np.ndarray:
    """Binary P5 reader (test/QA path)."""
    raw = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        # skip whitespace and comment lines between header tokens
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    magic, w, h, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    if magic != b"P5":
        raise InputError(f"{path} is not binary PGM")
    dtype = ">u2" if maxval > 255 else np.uint8
    data = np.frombuffer(raw[pos:], dtype=dtype)
    if data.size != w * h:
        raise InputError(f"{path}: pixel count mismatch")
    return data.reshape(h, w).astype(np.uint16)


# ------------------------------------------------------------ paired CSVs


@dataclass(frozen=True)
class PairedTable:
    """One cohort table: per-patient (original, revised) measurements.

    ``diff`` and ``percent`` hold the table's own printed derived
    columns when present (None otherwise); ``meta`` carries '#' header
    annotations such as metric, units and diff orientation.
    """

    patients: tuple
    us: np.ndarray = field(repr=False)
    fused: np.ndarray = field(repr=False)
    diff: Optional[np.ndarray] = field(default=None, repr=False)
    percent: Optional[np.ndarray] = field(default=None, repr=False)
    meta: dict = field(default_factory=dict)

    @property
    def diff_orientation(self) -> str:
        return self.meta.get("diff_orientation", "fused_minus_us")


def load_paired_csv(path) -> PairedTable:
    path = Path(path)
    if not path.exists():
        raise InputError(f"no such file: {path}")
    meta = {}
    header = None
    rows = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line.lstrip("#").strip()
            if ":" in body:
                key, value = body.split(":", 1)
                meta[key.strip()] = value.strip()
            continue
        if header is None:
            header = [c.strip() for c in line.split(",")]
            continue
        rows.append([c.strip() for c in line.split(",")])
    if header is None or not rows:
        raise InputError(f"{path} holds no data rows")
    cols = {name: [row[i] for row in rows] for i, name in enumerate(header)}
    if "us" not in cols or "fused" not in cols:
        raise InputError(f"{path} must have 'us' and 'fused' columns")
    return PairedTable(
        patients=tuple(cols.get("patient", [str(i + 1) for i in range(len(rows))])),
        us=np.array(cols["us"], dtype=float),
        fused=np.array(cols["fused"], dtype=float),
        diff=np.array(cols["diff"], dtype=float) if "diff" in cols else None,
        percent=np.array(cols["percent"], dtype=float) if "percent" in cols else None,
        meta=meta,
    )


def load_two_column_csv(path) -> tuple:
    """Plain two-column numeric CSV (optional single header line)."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"no such file: {path}")
    lines = [
        ln.strip()
        for ln in path.read_text().splitlines()
        if ln.strip() and not ln.strip().startswith("#")
    ]
    try:
        float(lines[0].split(",")[0])
        start = 0
    except ValueError:
        start = 1
    data = np.array([ln.split(",") for ln in lines[start:]], dtype=float)
    if data.ndim != 2 or data.shape[1] != 2:
        raise InputError(f"{path} is not a two-column table")
    return data[:, 0], data[:, 1]


# --------------------------------------------------------------- manifest


@dataclass
class PatientCase:
    """One patient's loaded inputs."""

    patient_id: str
    trus_volume: ScalarVolume
    trus_geometry: SliceGeometry
    mri_volume: ScalarVolume
    us_contours: dict
    mri_contours: dict
    seed_plan: Optional[SeedPlan] = None
    source_landmarks: Optional[np.ndarray] = None
    target_landmarks: Optional[np.ndarray] = None


_REQUIRED_MANIFEST_FIELDS = (
    "patient_id",
    "trus_volume",
    "trus_geometry",
    "mri_volume",
    "us_contours",
    "mri_contours",
)


def load_manifest(path) -> PatientCase:
    """Parse a patient-case manifest, resolving file references relative
    to the manifest's directory."""
    path = Path(path)
    payload = _read_json(path)
    for name in _REQUIRED_MANIFEST_FIELDS:
        if name not in payload:
            raise ManifestError(f"manifest missing required field {name!r}", field=name)
    base = path.parent

    geom = payload["trus_geometry"]
    for key in ("width", "height", "pixel_spacing", "origin", "slice_step_mm"):
        if key not in geom:
            raise ManifestError(
                f"manifest missing required field 'trus_geometry.{key}'",
                field=f"trus_geometry.{key}",
            )
    geometry = SliceGeometry(
        width=int(geom["width"]),
        height=int(geom["height"]),
        pixel_spacing=tuple(geom["pixel_spacing"]),
        origin=tuple(geom["origin"]),
        slice_step_mm=float(geom["slice_step_mm"]),
    )

    def _load_stacks(mapping: dict, side: str) -> dict:
        if "prostate" not in mapping:
            raise ManifestError(
                f"manifest missing required field '{side}.prostate'",
                field=f"{side}.prostate",
            )
        return {name: load_contour_stack(base / rel) for name, rel in mapping.items()}

    case = PatientCase(
        patient_id=str(payload["patient_id"]),
        trus_volume=load_volume(base / payload["trus_volume"]),
        trus_geometry=geometry,
        mri_volume=load_volume(base / payload["mri_volume"]),
        us_contours=_load_stacks(payload["us_contours"], "us_contours"),
        mri_contours=_load_stacks(payload["mri_contours"], "mri_contours"),
    )
    if payload.get("seed_plan"):
        case.seed_plan = load_seed_plan(base / payload["seed_plan"])
    lm = payload.get("landmarks")
    if lm:
        for key in ("source", "target"):
            if key not in lm:
                raise ManifestError(
                    f"manifest missing required field 'landmarks.{key}'",
                    field=f"landmarks.{key}",
                )
        case.source_landmarks = np.asarray(lm["source"], dtype=float)
        case.target_landmarks = np.asarray(lm["target"], dtype=float)
        if case.source_landmarks.shape != case.target_landmarks.shape:
            raise ManifestError(
                "landmark lists must have matching shapes", field="landmarks"
            )
    return case
