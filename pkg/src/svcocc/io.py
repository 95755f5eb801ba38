"""CSV ingestion and output writers.

Input formats (all with header rows):
  detections:            species,site,replicate,value   value in {0,1,NA}
  coordinates:           site,x,y                       planar units
  covariates:            site,name,value                long format
  detection covariates:  site[,replicate],name,value
  range mask:            species,site,value             value in {0,1}

Sites are keyed by the coordinates file, which fixes the site order.
Coordinates that look like longitude/latitude are refused unless
explicitly allowed, since all distances are planar Euclidean.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd

from .errors import DataError
from .single import OccupancyDataset
from .multi import MultiSpeciesDataset

__all__ = [
    "read_coordinates",
    "read_detections",
    "read_covariates",
    "read_detection_covariates",
    "read_range_mask",
    "looks_geographic",
    "build_single_dataset",
    "build_multi_dataset",
    "write_dataset_csvs",
    "write_truth_csv",
]


def _read_csv(path, required: tuple, what: str) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{what} file not found: {path}")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except Exception as exc:
        raise DataError(f"could not parse {what} file {path}: {exc}") from exc
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise DataError(
            f"{what} file {path} lacks required columns {missing}; "
            f"found {list(df.columns)}"
        )
    return df


def _to_float(series, what, path):
    try:
        return series.astype(np.float64)
    except ValueError as exc:
        raise DataError(f"non-numeric value in {what} of {path}: {exc}") from exc


def looks_geographic(coords: np.ndarray) -> bool:
    """Heuristic: values inside longitude/latitude bounds spanning a few
    degrees. Unit-square simulations and km-scale projections pass."""
    x, y = coords[:, 0], coords[:, 1]
    in_bounds = np.all(np.abs(x) <= 180.0) and np.all(np.abs(y) <= 90.0)
    xr = float(x.max() - x.min())
    yr = float(y.max() - y.min())
    return bool(in_bounds and 1.5 < xr <= 70.0 and 1.5 < yr <= 70.0)


def read_coordinates(path, allow_geographic: bool = False):
    """-> (site_ids list, coords (J, 2)). Site order follows the file."""
    df = _read_csv(path, ("site", "x", "y"), "coordinates")
    ids = df["site"].tolist()
    if len(set(ids)) != len(ids):
        dupes = df["site"][df["site"].duplicated()].tolist()
        raise DataError(f"duplicate site ids in {path}: {dupes[:10]}")
    coords = np.column_stack(
        [_to_float(df["x"], "x", path), _to_float(df["y"], "y", path)]
    )
    if looks_geographic(coords) and not allow_geographic:
        raise DataError(
            f"coordinates in {path} look like longitude/latitude; project them "
            "to planar units, or set allow_geographic to accept them as-is"
        )
    return ids, coords


_MISSING_TOKENS = {"", "NA", "NaN", "nan", "N/A"}


def read_detections(path, site_ids: list):
    """-> (species list, y (N, J, K) with NaN missing, replicate labels)."""
    df = _read_csv(path, ("species", "site", "replicate", "value"), "detections")
    site_index = {s: i for i, s in enumerate(site_ids)}
    unknown = sorted(set(df["site"]) - set(site_ids))
    if unknown:
        raise DataError(f"detections reference unknown sites: {unknown[:10]}")
    species = sorted(df["species"].unique())
    reps = df["replicate"].unique()
    try:
        rep_order = sorted(reps, key=float)
    except ValueError:
        rep_order = sorted(reps)
    rep_index = {r: k for k, r in enumerate(rep_order)}

    y = np.full((len(species), len(site_ids), len(rep_order)), np.nan)
    sp_index = {s: i for i, s in enumerate(species)}
    rows_i = df["species"].map(sp_index).to_numpy()
    rows_j = df["site"].map(site_index).to_numpy()
    rows_k = df["replicate"].map(rep_index).to_numpy()
    values = df["value"].to_numpy()
    for n, raw in enumerate(values):
        if raw in _MISSING_TOKENS:
            continue
        if raw not in ("0", "1"):
            raise DataError(
                f"detections row {n + 2} of {path}: value {raw!r} is not 0, 1, or NA"
            )
        y[rows_i[n], rows_j[n], rows_k[n]] = float(raw)
    return species, y, [str(r) for r in rep_order]


def read_covariates(path, site_ids: list, names: list) -> np.ndarray:
    """-> (J, len(names)) values in the requested column order."""
    df = _read_csv(path, ("site", "name", "value"), "covariates")
    unknown = sorted(set(df["site"]) - set(site_ids))
    if unknown:
        raise DataError(f"covariates reference unknown sites: {unknown[:10]}")
    available = set(df["name"])
    missing = [n for n in names if n not in available]
    if missing:
        raise DataError(
            f"covariates file {path} lacks {missing}; has {sorted(available)}"
        )
    site_index = {s: i for i, s in enumerate(site_ids)}
    out = np.full((len(site_ids), len(names)), np.nan)
    for col, name in enumerate(names):
        sub = df[df["name"] == name]
        out[sub["site"].map(site_index).to_numpy(), col] = _to_float(
            sub["value"], name, path
        )
    holes = np.argwhere(np.isnan(out))
    if holes.size:
        j, c = holes[0]
        raise DataError(
            f"covariate {names[c]!r} missing for site {site_ids[j]!r} in {path}"
        )
    return out


def read_detection_covariates(
    path, site_ids: list, names: list, n_replicates: int, rep_labels: list
) -> np.ndarray:
    """-> (J, K, len(names)). Site-level rows broadcast across replicates;
    a replicate column gives observation-level values."""
    df = _read_csv(path, ("site", "name", "value"), "detection covariates")
    unknown = sorted(set(df["site"]) - set(site_ids))
    if unknown:
        raise DataError(f"detection covariates reference unknown sites: {unknown[:10]}")
    available = set(df["name"])
    missing = [n for n in names if n not in available]
    if missing:
        raise DataError(
            f"detection covariates file {path} lacks {missing}; has {sorted(available)}"
        )
    site_index = {s: i for i, s in enumerate(site_ids)}
    out = np.full((len(site_ids), n_replicates, len(names)), np.nan)
    per_replicate = "replicate" in df.columns
    if per_replicate:
        rep_index = {r: k for k, r in enumerate(rep_labels)}
        bad = sorted(set(df["replicate"]) - set(rep_labels))
        if bad:
            raise DataError(
                f"detection covariates use unknown replicate labels {bad[:10]}; "
                f"detections define {rep_labels}"
            )
    for col, name in enumerate(names):
        sub = df[df["name"] == name]
        vals = _to_float(sub["value"], name, path).to_numpy()
        j = sub["site"].map(site_index).to_numpy()
        if per_replicate:
            k = sub["replicate"].map(rep_index).to_numpy()
            out[j, k, col] = vals
        else:
            out[j, :, col] = vals[:, None]
    return out


def read_range_mask(path, site_ids: list, species: list) -> np.ndarray:
    df = _read_csv(path, ("species", "site", "value"), "range mask")
    unknown = sorted(set(df["site"]) - set(site_ids))
    if unknown:
        raise DataError(f"range mask references unknown sites: {unknown[:10]}")
    unknown_sp = sorted(set(df["species"]) - set(species))
    if unknown_sp:
        raise DataError(f"range mask references unknown species: {unknown_sp[:10]}")
    site_index = {s: i for i, s in enumerate(site_ids)}
    sp_index = {s: i for i, s in enumerate(species)}
    mask = np.ones((len(species), len(site_ids)), dtype=np.int8)
    vals = df["value"].to_numpy()
    bad = [v for v in np.unique(vals) if v not in ("0", "1")]
    if bad:
        raise DataError(f"range mask values must be 0/1, got {bad[:5]}")
    mask[df["species"].map(sp_index), df["site"].map(site_index)] = vals.astype(np.int8)
    return mask


def _standardize_columns(values: np.ndarray, rows=None) -> np.ndarray:
    """Center/scale each column using the given rows (sample sd)."""
    ref = values if rows is None else values[rows]
    mean = ref.mean(axis=0)
    sd = ref.std(axis=0, ddof=1)
    if np.any(sd == 0):
        bad = np.where(sd == 0)[0]
        raise DataError(f"cannot standardize constant covariate columns {bad.tolist()}")
    return (values - mean) / sd


def build_single_dataset(
    coords_path,
    detections_path,
    occurrence_path=None,
    occurrence_names=(),
    detection_path=None,
    detection_names=(),
    species=None,
    standardize=False,
    allow_geographic=False,
    duplicate_jitter=None,
) -> OccupancyDataset:
    site_ids, coords = read_coordinates(coords_path, allow_geographic)
    all_species, y, rep_labels = read_detections(detections_path, site_ids)
    if species is None:
        if len(all_species) != 1:
            raise DataError(
                f"detections contain {len(all_species)} species {all_species[:5]}; "
                "a single-species fit needs data.species to pick one"
            )
        species = all_species[0]
    elif species not in all_species:
        raise DataError(f"unknown species {species!r}; file has {all_species[:10]}")
    y1 = y[all_species.index(species)]

    J, K = y1.shape
    occurrence_names = list(occurrence_names)
    if occurrence_names:
        occ = read_covariates(occurrence_path, site_ids, occurrence_names)
        if standardize:
            occ = _standardize_columns(occ)
        X = np.column_stack([np.ones(J), occ])
    else:
        X = np.ones((J, 1))
    detection_names = list(detection_names)
    if detection_names:
        det = read_detection_covariates(
            detection_path, site_ids, detection_names, K, rep_labels
        )
        if standardize:
            surveyed = ~np.isnan(y1)
            flat = det.reshape(-1, det.shape[2])
            det = _standardize_columns(flat, rows=surveyed.ravel()).reshape(det.shape)
        V = np.concatenate([np.ones((J, K, 1)), det], axis=2)
    else:
        V = None
    return OccupancyDataset(
        coords,
        y1,
        X,
        V,
        covariate_names=["intercept"] + occurrence_names,
        detection_names=["intercept"] + detection_names,
        duplicate_jitter=duplicate_jitter,
        site_ids=site_ids,
    )


def build_multi_dataset(
    coords_path,
    detections_path,
    occurrence_path=None,
    occurrence_names=(),
    detection_path=None,
    detection_names=(),
    range_mask_path=None,
    species_order=None,
    standardize=False,
    allow_geographic=False,
    duplicate_jitter=None,
) -> MultiSpeciesDataset:
    """Assemble the joint dataset. ``species_order`` controls which species
    anchor the factor constraints (defaults to name order)."""
    site_ids, coords = read_coordinates(coords_path, allow_geographic)
    all_species, y, rep_labels = read_detections(detections_path, site_ids)
    if species_order is not None:
        unknown = [s for s in species_order if s not in all_species]
        if unknown:
            raise DataError(f"species_order includes unknown species {unknown[:10]}")
        if len(species_order) != len(set(species_order)):
            raise DataError("species_order has duplicates")
        keep = [all_species.index(s) for s in species_order]
        y = y[keep]
        all_species = list(species_order)
    N = len(all_species)
    J, K = y.shape[1], y.shape[2]

    mask = (
        read_range_mask(range_mask_path, site_ids, all_species)
        if range_mask_path
        else np.ones((N, J), dtype=np.int8)
    )

    occurrence_names = list(occurrence_names)
    X_species = None
    if occurrence_names:
        occ = read_covariates(occurrence_path, site_ids, occurrence_names)
        if standardize:
            X_species = np.empty((N, J, 1 + len(occurrence_names)))
            for i in range(N):
                rows = np.where(mask[i] == 1)[0]
                X_species[i] = np.column_stack(
                    [np.ones(J), _standardize_columns(occ, rows=rows)]
                )
            occ = _standardize_columns(occ)
        X = np.column_stack([np.ones(J), occ])
    else:
        X = np.ones((J, 1))
    detection_names = list(detection_names)
    if detection_names:
        det = read_detection_covariates(
            detections_path if detection_path is None else detection_path,
            site_ids,
            detection_names,
            K,
            rep_labels,
        )
        if standardize:
            surveyed = ~np.isnan(y).all(axis=0)
            flat = det.reshape(-1, det.shape[2])
            det = _standardize_columns(flat, rows=surveyed.ravel()).reshape(det.shape)
        V = np.concatenate([np.ones((J, K, 1)), det], axis=2)
    else:
        V = None
    return MultiSpeciesDataset(
        coords,
        y,
        X,
        V,
        range_mask=mask,
        species_names=all_species,
        covariate_names=["intercept"] + occurrence_names,
        detection_names=["intercept"] + detection_names,
        duplicate_jitter=duplicate_jitter,
        site_ids=site_ids,
        X_species=X_species,
    )


def write_dataset_csvs(data: OccupancyDataset, outdir, species: str = "sp0") -> None:
    """Write one dataset in the ingestion formats (single-species)."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    ids = data.site_ids
    pd.DataFrame(
        {"site": ids, "x": data.coords.coords[:, 0], "y": data.coords.coords[:, 1]}
    ).to_csv(outdir / "coordinates.csv", index=False, lineterminator="\n")

    rows = []
    for j in range(data.n_sites):
        for k in range(data.n_replicates):
            rows.append(
                {
                    "species": species,
                    "site": ids[j],
                    "replicate": k + 1,
                    "value": int(data.y[j, k]) if data.obs_mask[j, k] else "NA",
                }
            )
    pd.DataFrame(rows).to_csv(outdir / "detections.csv", index=False, lineterminator="\n")

    occ_rows = []
    for name, col in zip(data.covariate_names[1:], data.X[:, 1:].T):
        for j in range(data.n_sites):
            occ_rows.append({"site": ids[j], "name": name, "value": col[j]})
    if occ_rows:
        pd.DataFrame(occ_rows).to_csv(
            outdir / "occurrence_covariates.csv", index=False, lineterminator="\n"
        )

    det_rows = []
    for p, name in enumerate(data.detection_names[1:], start=1):
        for j in range(data.n_sites):
            for k in range(data.n_replicates):
                det_rows.append(
                    {
                        "site": ids[j],
                        "replicate": k + 1,
                        "name": name,
                        "value": data.V[j, k, p],
                    }
                )
    if det_rows:
        pd.DataFrame(det_rows).to_csv(
            outdir / "detection_covariates.csv", index=False, lineterminator="\n"
        )


def write_truth_csv(truth: dict, data: OccupancyDataset, path) -> None:
    coords = truth["coords"]
    pd.DataFrame(
        {
            "site": data.site_ids,
            "x": coords[:, 0],
            "y": coords[:, 1],
            "w_intercept": truth["w_intercept"],
            "w_covariate": truth["w_covariate"],
            "beta_tilde_intercept": truth["beta_tilde_intercept"],
            "beta_tilde_covariate": truth["beta_tilde_covariate"],
            "psi": truth["psi"],
            "z": truth["z"],
        }
    ).to_csv(path, index=False, lineterminator="\n")
