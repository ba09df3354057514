"""Run configuration shared by the command-line front end.

Every tunable is declared once in :data:`OPTIONS` with its INI section, type,
default and help text.  Values are resolved in the order built-in default,
INI file, command-line flag; later sources win.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass
from typing import Any, Callable

from .errors import ValidationError

__all__ = ["Option", "OPTIONS", "SECTIONS", "RunConfig", "load_ini", "parse_value"]


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text: str) -> tuple[int, ...]:
    """``"0,1,5-9"`` style band lists (ranges inclusive)."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        lo, sep, hi = part.partition("-")
        if sep:
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return tuple(out)


def _snr(text: str) -> float:
    v = float(text)
    if math.isnan(v):
        raise ValueError("SNR cannot be NaN")
    return v


def _project(text: str) -> str:
    t = str(text).strip().lower()
    if t in ("auto", "yes", "no"):
        return t
    return "yes" if _bool(t) else "no"


@dataclass(frozen=True)
class Option:
    name: str
    section: str
    parse: Callable[[str], Any]
    default: Any
    help: str


OPTIONS: tuple[Option, ...] = (
    Option("rows", "simulate", int, 128, "fine-grid rows"),
    Option("cols", "simulate", int, 128, "fine-grid columns"),
    Option("bands", "simulate", int, 100, "hyperspectral bands"),
    Option("endmembers", "simulate", int, 5, "number of endmember signatures"),
    Option("factor", "simulate", int, 4, "subsampling factor"),
    Option("kernel", "simulate", str, "starck_murtagh", "blur kernel: starck_murtagh, gaussian or box"),
    Option("kernel_support", "simulate", int, 5, "support of the simulated kernel"),
    Option("sigma", "simulate", float, 2.0, "Gaussian kernel width"),
    Option("sensor", "simulate", str, "pan", "second image: pan or ms"),
    Option("snr_h", "simulate", _snr, 30.0, "hyperspectral SNR in dB"),
    Option("snr_m", "simulate", _snr, 40.0, "multispectral/PAN SNR in dB"),
    Option("no_noise", "simulate", _bool, False, "skip noise entirely"),
    Option("seed", "simulate", int, 0, "random seed"),
    Option("ls", "preprocess", int, 10, "subspace dimension"),
    Option("keep", "preprocess", _int_list, None, "hyperspectral bands to keep, e.g. 0-9,12"),
    Option("quantile", "preprocess", float, 0.999, "normalisation quantile"),
    Option("lambda_r", "calibrate", float, 10.0, "spectral response smoothness weight"),
    Option("lambda_b", "calibrate", float, 10.0, "kernel smoothness weight"),
    Option("cal_support", "calibrate", int, 7, "support of the estimated kernel"),
    Option("strong_blur_support", "calibrate", int, 9, "box blur used before estimating the response"),
    Option("refine_iters", "calibrate", int, 0, "alternating response/kernel refinement passes"),
    Option("lambda_m", "solver", float, 1.0, "weight of the multispectral data term"),
    Option("lambda_phi", "solver", float, None, "regularisation weight (default 1e-2 for PAN, 5e-4 for MS)"),
    Option("mu", "solver", float, 5e-2, "ADMM penalty"),
    Option("max_iters", "solver", int, 200, "iteration cap"),
    Option("rel_tol", "solver", float, 1e-4, "relative residual tolerance, 0 disables"),
    Option("window", "evaluate", int, 32, "UIQI window"),
    Option("stride", "evaluate", int, 1, "UIQI window stride"),
    Option("trim", "evaluate", float, 0.99, "fraction of sorted pixel errors kept"),
    Option("project", "evaluate", _project, "auto", "project the reference onto the subspace: auto, yes, no"),
    Option("ratio", "evaluate", float, None, "resolution ratio override (normally read from headers)"),
)

SECTIONS = tuple(dict.fromkeys(o.section for o in OPTIONS))
_BY_NAME = {o.name: o for o in OPTIONS}


def parse_value(name: str, text: str) -> Any:
    opt = _BY_NAME[name]
    try:
        return opt.parse(text)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"invalid value for {name}: {text!r} ({exc})") from exc


def load_ini(path) -> dict:
    """Read an INI file into ``{option: value}``; unknown sections or keys are errors."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ValidationError(f"{path}: {exc}") from exc
    values = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ValidationError(f"{path}: unknown section [{section}]")
        for key, text in cp.items(section):
            key = key.replace("-", "_")
            opt = _BY_NAME.get(key)
            if opt is None or opt.section != section:
                raise ValidationError(f"{path}: unknown key {key!r} in [{section}]")
            values[key] = parse_value(key, text)
    return values


class RunConfig:
    """Resolved option values, readable as attributes."""

    def __init__(self, ini: dict | None = None, overrides: dict | None = None):
        values = {o.name: o.default for o in OPTIONS}
        for src in (ini or {}, overrides or {}):
            for k, v in src.items():
                if k not in values:
                    raise ValidationError(f"unknown option {k!r}")
                if v is not None:
                    values[k] = v
        self._values = values
        self._validate()

    def __getattr__(self, name):
        try:
            return self.__dict__["_values"][name]
        except KeyError:
            raise AttributeError(name) from None

    def as_dict(self, section: str | None = None) -> dict:
        return {
            o.name: self._values[o.name]
            for o in OPTIONS
            if section is None or o.section == section
        }

    def _validate(self):
        v = self._values
        positive = ("rows", "cols", "bands", "endmembers", "factor", "kernel_support", "ls",
                    "cal_support", "strong_blur_support", "window", "stride")
        for k in positive:
            if v[k] < 1:
                raise ValidationError(f"{k} must be a positive integer, got {v[k]}")
        for k in ("lambda_r", "lambda_b", "mu"):
            if not v[k] > 0:
                raise ValidationError(f"{k} must be positive, got {v[k]}")
        for k in ("lambda_m", "rel_tol", "max_iters", "refine_iters"):
            if v[k] < 0:
                raise ValidationError(f"{k} must be nonnegative, got {v[k]}")
        if v["lambda_phi"] is not None and v["lambda_phi"] < 0:
            raise ValidationError("lambda_phi must be nonnegative")
        if v["sensor"] not in ("pan", "ms"):
            raise ValidationError(f"sensor must be 'pan' or 'ms', got {v['sensor']!r}")
        if v["kernel"] not in ("starck_murtagh", "gaussian", "box"):
            raise ValidationError(f"unknown kernel {v['kernel']!r}")
        if not 0 < v["quantile"] <= 1 or not 0 < v["trim"] <= 1:
            raise ValidationError("quantile and trim must lie in (0, 1]")
        if v["ratio"] is not None and not v["ratio"] > 0:
            raise ValidationError("ratio must be positive")
