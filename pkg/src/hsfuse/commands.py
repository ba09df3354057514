"""File-level commands: simulate, calibrate, fuse, evaluate and the full pipeline.

Each command reads every input before producing anything, stages its outputs
as hidden temporary files in the output directory and renames them into place
only once all of them have been written.  A failing command therefore leaves
no partial results behind.

Every command also merges an entry for itself into ``manifest.json`` in the
output directory, recording parameters, input/output file names and SHA-256
digests.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from . import cubeio
from .calibration import CalibConfig, calibrate, consistency_residual
from .config import RunConfig
from .cubeio import ContainerError, Cube
from .degradation import SpectralResponse, simulate
from .errors import DimensionError, FusionError, ValidationError
from .imaging import ConvolutionKernel, Grid, SamplingLattice, SpectralImage
from .metrics import quality_report
from .solver import FusionProblem, SolverConfig, solve
from .subspace import Subspace, denoise_project, preprocess, remove_bands

__all__ = [
    "MANIFEST_SCHEMA",
    "StageError",
    "OutputSet",
    "image_to_cube",
    "cube_to_image",
    "response_to_cube",
    "cube_to_response",
    "kernel_to_cube",
    "cube_to_kernel",
    "cmd_simulate",
    "cmd_calibrate",
    "cmd_fuse",
    "cmd_evaluate",
    "cmd_pipeline",
]

log = logging.getLogger(__name__)

MANIFEST_SCHEMA = 1
SPAN_UM = (0.4, 2.5)


class StageError(FusionError):
    """Wraps the first failure of a pipeline run with the stage it happened in."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


# -- transactional output --------------------------------------------------------


class OutputSet:
    """Collects output files as temporaries and publishes them together."""

    def __init__(self, out_dir):
        self.dir = Path(out_dir)
        try:
            self.dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ContainerError(f"cannot create output directory {self.dir}: {exc.strerror or exc}") from exc
        self._staged: dict[str, str] = {}

    def _tmp(self, name: str) -> str:
        try:
            fd, tmp = tempfile.mkstemp(prefix=f".{name}.", suffix=".tmp", dir=self.dir)
        except OSError as exc:
            raise ContainerError(f"cannot write to {self.dir}: {exc.strerror or exc}") from exc
        os.close(fd)
        os.chmod(tmp, cubeio.new_file_mode())
        self._staged[name] = tmp
        return tmp

    def add_bytes(self, name: str, payload: bytes) -> None:
        with open(self._tmp(name), "wb") as fh:
            fh.write(payload)

    def add_text(self, name: str, text: str) -> None:
        self.add_bytes(name, text.encode("utf-8"))

    def add_cube(self, name: str, cube: Cube) -> None:
        self.add_bytes(name, cubeio.encode(cube))

    def add_file(self, name: str, writer) -> None:
        """``writer(path)`` fills a temporary path."""
        writer(self._tmp(name))

    def digests(self) -> dict:
        out = {}
        for name, tmp in self._staged.items():
            if name != "manifest.json":
                out[name] = _sha256(tmp)
        return out

    def commit(self) -> dict:
        paths = {}
        for name, tmp in self._staged.items():
            final = self.dir / name
            os.replace(tmp, final)
            paths[name] = final
        self._staged.clear()
        return paths

    def discard(self) -> None:
        for tmp in self._staged.values():
            if os.path.exists(tmp):
                os.unlink(tmp)
        self._staged.clear()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            self.discard()
        return False


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(value):
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    if isinstance(value, tuple):
        return list(value)
    return value


def _stage_manifest(out: OutputSet, stage: str, params: dict, inputs: dict) -> None:
    path = out.dir / "manifest.json"
    manifest = {"schema_version": MANIFEST_SCHEMA, "stages": {}}
    if path.exists():
        try:
            old = json.loads(path.read_text())
            if old.get("schema_version") == MANIFEST_SCHEMA:
                manifest = old
        except (OSError, ValueError):
            log.warning("ignoring unreadable manifest %s", path)
    manifest["stages"][stage] = {
        "params": {k: _jsonable(v) for k, v in params.items()},
        "inputs": {k: {"file": str(p), "sha256": _sha256(p)} for k, p in inputs.items()},
        "outputs": {name: {"file": name, "sha256": d} for name, d in out.digests().items()},
    }
    out.add_text("manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# -- conversions between containers and domain objects ---------------------------


def image_to_cube(img: SpectralImage, **meta) -> Cube:
    return Cube(img.cube, meta)


def cube_to_image(cube: Cube) -> SpectralImage:
    b, r, c = cube.shape
    return SpectralImage(cube.data.astype(np.float64).reshape(b, r * c), Grid(r, c))


def _mask_text(mask: np.ndarray) -> str:
    return ";".join("".join("1" if m else "0" for m in row) for row in mask)


def response_to_cube(R: SpectralResponse, **meta) -> Cube:
    meta = {"kind": "response", "overlap": _mask_text(R.overlap_mask), **meta}
    return Cube(R.matrix[None], meta)


def cube_to_response(cube: Cube, source: str = "response") -> SpectralResponse:
    if cube.meta.get("kind") != "response" or cube.shape[0] != 1:
        raise ValidationError(f"{source} does not hold a spectral response")
    R = cube.data[0].astype(np.float64)
    mask = None
    if "overlap" in cube.meta:
        rows = cube.meta["overlap"].split(";")
        if len(rows) != R.shape[0] or any(len(r) != R.shape[1] or set(r) - {"0", "1"} for r in rows):
            raise ValidationError(f"{source}: overlap mask does not match the response shape")
        mask = np.array([[ch == "1" for ch in r] for r in rows])
    return SpectralResponse(R, mask)


def kernel_to_cube(k: ConvolutionKernel, **meta) -> Cube:
    return Cube(k.weights[None], {"kind": "kernel", **meta})


def cube_to_kernel(cube: Cube, source: str = "kernel") -> ConvolutionKernel:
    if cube.meta.get("kind") != "kernel" or cube.shape[0] != 1:
        raise ValidationError(f"{source} does not hold a blur kernel")
    return ConvolutionKernel(cube.data[0].astype(np.float64))


def _lattice(Yh: SpectralImage, Ym: SpectralImage) -> SamplingLattice:
    (hr, hc), (mr, mc) = Yh.grid.shape, Ym.grid.shape
    if mr % hr or mc % hc or mr // hr != mc // hc:
        raise DimensionError(
            f"multispectral grid {mr}x{mc} is not a uniform integer refinement of hyperspectral grid {hr}x{hc}"
        )
    return SamplingLattice(Ym.grid, mr // hr)


def _read(path, what: str) -> Cube:
    if path is None:
        raise ValidationError(f"no {what} file given")
    return cubeio.read_cube(path)


def _header_keep(meta: dict, n_bands: int) -> list[int]:
    return cubeio.parse_ints(meta["keep"]) if "keep" in meta else list(range(n_bands))


def _raw_response(R: SpectralResponse, meta: dict, L_h: int) -> SpectralResponse:
    """Response over all ``L_h`` original bands in raw (unnormalised) units."""
    domain = meta.get("domain", "raw")
    if domain == "raw":
        if R.n_hs != L_h:
            raise DimensionError(f"raw response has {R.n_hs} columns, hyperspectral image has {L_h} bands")
        return R
    if domain != "normalized":
        raise ValidationError(f"unknown response domain {domain!r}")
    try:
        keep = cubeio.parse_ints(meta["keep"])
        s_h = cubeio.parse_floats(meta["scales_h"])
        s_m = cubeio.parse_floats(meta["scales_m"])
    except KeyError as exc:
        raise ValidationError(f"normalized response lacks header field {exc}") from None
    if len(keep) != R.n_hs or s_h.size != R.n_hs or s_m.size != R.n_ms or max(keep) >= L_h:
        raise DimensionError("normalized response header does not match its matrix")
    full = np.zeros((R.n_ms, L_h))
    mask = np.zeros((R.n_ms, L_h), dtype=bool)
    full[:, keep] = s_m[:, None] * R.matrix / s_h[None, :]
    mask[:, keep] = R.overlap_mask
    return SpectralResponse(full, mask)


def _to_working_response(R_raw: SpectralResponse, keep, s_h, s_m) -> SpectralResponse:
    M = R_raw.matrix[:, keep] * s_h[None, :] / s_m[:, None]
    mask = R_raw.overlap_mask[:, keep]
    return SpectralResponse(np.where(mask, M, 0.0), mask)


# -- commands --------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig, out_dir) -> dict:
    """Synthetic scene and its two observations, plus the true response and kernel."""
    snr_h = math.inf if cfg.no_noise else cfg.snr_h
    snr_m = math.inf if cfg.no_noise else cfg.snr_m
    ds = simulate(
        rows=cfg.rows, cols=cfg.cols, L_h=cfg.bands, n_endmembers=cfg.endmembers, factor=cfg.factor,
        kernel=cfg.kernel, kernel_support=cfg.kernel_support, sigma=cfg.sigma, sensor=cfg.sensor,
        snr_h=snr_h, snr_m=snr_m, seed=cfg.seed,
    )
    wl = cubeio.format_floats(np.linspace(SPAN_UM[0], SPAN_UM[1], cfg.bands))
    hr, hc = ds.lattice.coarse.shape
    with OutputSet(out_dir) as out:
        out.add_cube("Z_truth.hscube", image_to_cube(ds.Z, kind="truth", wavelengths=wl, hs_rows=hr, hs_cols=hc))
        out.add_cube("Yh.hscube", image_to_cube(ds.Yh, kind="hyperspectral", wavelengths=wl))
        out.add_cube("Ym.hscube", image_to_cube(ds.Ym, kind=cfg.sensor))
        out.add_cube("R_true.hscube", response_to_cube(ds.response, domain="raw"))
        out.add_cube("kernel_true.hscube", kernel_to_cube(ds.kernel))
        params = cfg.as_dict("simulate")
        params["snr_h"], params["snr_m"] = snr_h, snr_m
        params["noise_seeds"] = [cfg.seed + 1, cfg.seed + 2]
        _stage_manifest(out, "simulate", params, {})
        return out.commit()


def _load_pair(yh_file, ym_file):
    Yh_c, Ym_c = _read(yh_file, "hyperspectral"), _read(ym_file, "multispectral")
    Yh, Ym = cube_to_image(Yh_c), cube_to_image(Ym_c)
    return Yh, Ym, _lattice(Yh, Ym)


def _keep(cfg: RunConfig, L_h: int) -> list[int]:
    return list(range(L_h)) if cfg.keep is None else list(cfg.keep)


def cmd_calibrate(yh_file, ym_file, cfg: RunConfig, out_dir, kernel_true_file=None) -> dict:
    """Estimate the spectral response and blur kernel from the observed pair."""
    Yh_raw, Ym_raw, lat = _load_pair(yh_file, ym_file)
    k_true = cube_to_kernel(_read(kernel_true_file, "kernel"), str(kernel_true_file)) if kernel_true_file else None
    keep = _keep(cfg, Yh_raw.bands)
    Yh, Ym, sub, info = preprocess(Yh_raw, Ym_raw, cfg.ls, keep, cfg.quantile)
    ccfg = CalibConfig(
        lambda_b=cfg.lambda_b, lambda_R=cfg.lambda_r, kernel_support=cfg.cal_support,
        strong_blur_support=cfg.strong_blur_support, band_ids=tuple(keep), refine_iters=cfg.refine_iters,
    )
    R, k = calibrate(Yh, Ym, lat, ccfg)
    rows = [("consistency_residual", consistency_residual(Yh, Ym, R, k, lat)),
            ("kernel_dc_gain", k.dc_gain), ("subspace_energy", sub.energy_fraction)]
    if k_true is not None:
        s = max(k.support, k_true.support)
        err = k.padded(s).weights - k_true.padded(s).weights
        rows.append(("kernel_rmse_over_peak", float(np.sqrt(np.mean(err**2)) / np.max(k_true.weights))))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "value"])
    for name, value in rows:
        w.writerow([name, repr(float(value))])
    inputs = {"Yh": yh_file, "Ym": ym_file}
    if kernel_true_file:
        inputs["kernel_true"] = kernel_true_file
    with OutputSet(out_dir) as out:
        out.add_cube("R_est.hscube", response_to_cube(
            R, domain="normalized", keep=cubeio.format_ints(keep),
            scales_h=cubeio.format_floats(info["scales_h"]), scales_m=cubeio.format_floats(info["scales_m"]),
        ))
        out.add_cube("kernel_est.hscube", kernel_to_cube(k))
        out.add_text("calibration.csv", buf.getvalue())
        params = {**cfg.as_dict("preprocess"), **cfg.as_dict("calibrate"), "keep": keep}
        _stage_manifest(out, "calibrate", params, inputs)
        return out.commit()


def solver_config(cfg: RunConfig, n_ms_bands: int) -> SolverConfig:
    sensor = "pan" if n_ms_bands == 1 else "ms"
    return SolverConfig.for_sensor(
        sensor, lambda_m=cfg.lambda_m, mu=cfg.mu, max_iters=cfg.max_iters, rel_tol=cfg.rel_tol,
        **({} if cfg.lambda_phi is None else {"lambda_phi": cfg.lambda_phi}),
    )


def cmd_fuse(yh_file, ym_file, r_file, kernel_file, cfg: RunConfig, out_dir) -> dict:
    """Preprocess, build the subspace, solve, and write the fused cube with its trace."""
    Yh_raw, Ym_raw, lat = _load_pair(yh_file, ym_file)
    R_cube = _read(r_file, "response")
    k = cube_to_kernel(_read(kernel_file, "kernel"), str(kernel_file))
    R_raw = _raw_response(cube_to_response(R_cube, str(r_file)), R_cube.meta, Yh_raw.bands)
    if R_raw.n_ms != Ym_raw.bands:
        raise DimensionError(f"response has {R_raw.n_ms} rows, multispectral image has {Ym_raw.bands} bands")
    keep = _keep(cfg, Yh_raw.bands)
    Yh, Ym, sub, info = preprocess(Yh_raw, Ym_raw, cfg.ls, keep, cfg.quantile)
    R = _to_working_response(R_raw, keep, info["scales_h"], info["scales_m"])
    scfg = solver_config(cfg, Ym.bands)
    result = solve(FusionProblem(Yh, Ym, sub, R, k, lat), scfg)
    hr, hc = lat.coarse.shape
    common = dict(domain="normalized", keep=cubeio.format_ints(keep), scales=cubeio.format_floats(info["scales_h"]))
    with OutputSet(out_dir) as out:
        out.add_cube("Z_hat.hscube", image_to_cube(result.Z_hat, kind="fused", hs_rows=hr, hs_cols=hc, **common))
        out.add_cube("X.hscube", image_to_cube(result.X, kind="coefficients"))
        out.add_cube("E.hscube", Cube(sub.basis[None], {"kind": "basis", **common}))
        out.add_file("trace.csv", result.trace.to_csv)
        params = {**cfg.as_dict("preprocess"), **cfg.as_dict("solver"), "keep": keep,
                  "lambda_phi": scfg.lambda_phi, "iterations": result.trace.iterations,
                  "converged": result.trace.converged}
        _stage_manifest(out, "fuse", params, {"Yh": yh_file, "Ym": ym_file, "R": r_file, "kernel": kernel_file})
        return out.commit()


def _resolution_ratio(cfg: RunConfig, *cubes: Cube) -> float:
    if cfg.ratio is not None:
        return float(cfg.ratio)
    for cube in cubes:
        if "hs_rows" in cube.meta and "hs_cols" in cube.meta:
            _, r, c = cube.shape
            n_h = int(cube.meta["hs_rows"]) * int(cube.meta["hs_cols"])
            return math.sqrt(r * c / n_h)
    raise ValidationError("cannot determine the resolution ratio from the headers; pass --ratio")


def cmd_evaluate(zhat_file, ztruth_file, cfg: RunConfig, out_dir, basis_file=None) -> dict:
    """Quality indices of a fused cube against the reference.

    The reference is brought into the fused cube's domain using the ``keep``
    and ``scales`` header fields.  With ``project`` set (``auto`` when a basis
    is found) it is also projected onto the fusion subspace.
    """
    Zc, Tc = _read(zhat_file, "fused"), _read(ztruth_file, "reference")
    Z, T = cube_to_image(Zc), cube_to_image(Tc)
    if Z.grid != T.grid:
        raise DimensionError(f"grids differ: {Z.grid.shape} vs {T.grid.shape}")
    keep = _header_keep(Zc.meta, T.bands)
    if "keep" in Zc.meta:
        T = remove_bands(T, keep)
    if "scales" in Zc.meta:
        scales = cubeio.parse_floats(Zc.meta["scales"])
        if scales.size != T.bands:
            raise DimensionError("scale list does not match the number of kept bands")
        T = SpectralImage(T.data / scales[:, None], T.grid)
    if T.bands != Z.bands:
        raise DimensionError(f"fused cube has {Z.bands} bands, reference has {T.bands} after band selection")
    if basis_file is None and cfg.project != "no":
        sibling = Path(zhat_file).with_name("E.hscube")
        basis_file = sibling if sibling.exists() else None
    projected = False
    if cfg.project == "yes" or (cfg.project == "auto" and basis_file is not None):
        Ec = _read(basis_file, "basis")
        if Ec.meta.get("kind") != "basis" or Ec.shape[0] != 1:
            raise ValidationError(f"{basis_file} does not hold a subspace basis")
        E = Ec.data[0].astype(np.float64)
        if E.shape[0] != T.bands:
            raise DimensionError(f"basis has {E.shape[0]} rows, reference has {T.bands} bands")
        T = denoise_project(T, Subspace(E, 1.0, np.ones(E.shape[1])))
        projected = True
    S = _resolution_ratio(cfg, Zc, Tc)
    rep = quality_report(Z, T, S, cfg.window, cfg.stride, cfg.trim)
    summary = rep.to_text() + f"ratio={S!r}\nbands={Z.bands}\nprojected={projected}\n"

    def table(header, rows):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        return buf.getvalue()

    with OutputSet(out_dir) as out:
        out.add_text("report.txt", summary)
        out.add_file("report.csv", rep.write_csv)
        out.add_text("band_rmse.csv", table(["band", "rmse"], [(b, repr(float(v))) for b, v in zip(keep, rep.band_rmse)]))
        out.add_text("pixel_rmse.csv", table(["rank", "rmse"], [(i, repr(float(v))) for i, v in enumerate(rep.pixel_rmse_sorted)]))
        inputs = {"Z_hat": zhat_file, "Z_truth": ztruth_file}
        if projected:
            inputs["basis"] = basis_file
        _stage_manifest(out, "evaluate", {**cfg.as_dict("evaluate"), "ratio": S, "projected": projected}, inputs)
        paths = out.commit()
    paths["summary"] = rep.summary()
    return paths


def cmd_pipeline(cfg: RunConfig, out_dir, skip_simulate: bool = False, yh_file=None, ym_file=None,
                 truth_file=None, kernel_true_file=None) -> dict:
    """simulate, calibrate, fuse and evaluate in one output directory."""
    out_dir = Path(out_dir)
    if skip_simulate:
        missing = [n for n, p in (("--yh", yh_file), ("--ym", ym_file), ("--truth", truth_file)) if p is None]
        if missing:
            raise ValidationError(f"--skip-simulate needs {', '.join(missing)}")

    def stage(name, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except FusionError as exc:
            raise StageError(name, exc) from exc

    if not skip_simulate:
        files = stage("simulate", cmd_simulate, cfg, out_dir)
        yh_file, ym_file = files["Yh.hscube"], files["Ym.hscube"]
        truth_file, kernel_true_file = files["Z_truth.hscube"], files["kernel_true.hscube"]
    cal = stage("calibrate", cmd_calibrate, yh_file, ym_file, cfg, out_dir, kernel_true_file)
    fused = stage("fuse", cmd_fuse, yh_file, ym_file, cal["R_est.hscube"], cal["kernel_est.hscube"], cfg, out_dir)
    return stage("evaluate", cmd_evaluate, fused["Z_hat.hscube"], truth_file, cfg, out_dir, fused["E.hscube"])
