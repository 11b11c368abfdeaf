"""Run configuration: an INI file layered over built-in defaults."""

import configparser
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from .errors import ConfigError

OUT_ENV = "ANNULUS_BUBBLE_LAB_OUT"
COMMANDS = ("radial", "spectrum", "sweep", "landscape", "construct", "verify", "all")

DEFAULTS = {
    "geometry": {"a": "1.0", "b": "2.0", "N": "3"},
    "radial": {"tol": "1e-10", "grid_size": "1001"},
    "spectrum": {"k_max": "12", "n_eigs": "3", "M": "2000", "margin_tol": "1e-3"},
    "sweep": {"R_min": "0.05", "R_max": "0.95", "n_R": "19", "k_range": "2, 3, 4",
              "M": "2000", "width": "1e-4"},
    "landscape": {"eta": "1e-2", "margin": "0.05", "n_ell": "121", "n_r": "101", "k_ref": "64"},
    "ansatz": {"k_list": "8, 16, 32, 64", "ell": "auto", "r": "auto", "L_max": "48",
               "density": "1", "slice_n": "201"},
    "verify": {"expansion_k": "8, 16, 32, 64", "ablation_k": "8", "symmetry_k": "8",
               "symmetry_probes": "100", "stencil_k": "8", "stencil_points": "200",
               "quad_order": "6", "quad_check_order": "8", "quad_tol": "1e-6"},
    "output": {"dir": "results"},
}


def _floats(text):
    return [float(x) for x in text.replace(",", " ").split()]


def _ints(text):
    return [int(x) for x in text.replace(",", " ").split()]


@dataclass
class RunConfig:
    a: float
    b: float
    N: int
    radial_tol: float
    grid_size: int
    k_max: int
    n_eigs: int
    M: int
    margin_tol: float
    sweep_R: tuple
    sweep_k: tuple
    sweep_M: int
    sweep_width: float
    eta: float
    margin: float
    n_ell: int
    n_r: int
    k_ref: int
    k_list: tuple
    ell: Optional[float]
    r: Optional[float]
    L_max: int
    density: int
    slice_n: int
    expansion_k: tuple
    ablation_k: tuple
    symmetry_k: int
    symmetry_probes: int
    stencil_k: int
    stencil_points: int
    quad_order: int
    quad_check_order: int
    quad_tol: float
    out_dir: str
    raw: dict = field(default_factory=dict, repr=False)

    def echo(self) -> dict:
        """The resolved configuration as plain JSON-serialisable data."""
        d = asdict(self)
        d.pop("raw")
        d.pop("out_dir")
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def load_config(path=None, out: Optional[str] = None) -> RunConfig:
    """Read ``path`` (may be ``None`` for pure defaults) and validate.

    The output directory is taken from ``out`` if given, else from the
    ``ANNULUS_BUBBLE_LAB_OUT`` environment variable, else from the file.
    """
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp.read_dict(DEFAULTS)
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    for sec in cp.sections():
        if sec not in DEFAULTS:
            raise ConfigError(f"unknown config section [{sec}]")
        for key in cp[sec]:
            if key not in DEFAULTS[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
    g = cp["geometry"]
    try:
        R_min, R_max = float(cp["sweep"]["R_min"]), float(cp["sweep"]["R_max"])
        n_R = int(cp["sweep"]["n_R"])
        an = cp["ansatz"]
        ve = cp["verify"]
        cfg = RunConfig(
            a=float(g["a"]), b=float(g["b"]), N=int(g["N"]),
            radial_tol=float(cp["radial"]["tol"]), grid_size=int(cp["radial"]["grid_size"]),
            k_max=int(cp["spectrum"]["k_max"]), n_eigs=int(cp["spectrum"]["n_eigs"]),
            M=int(cp["spectrum"]["M"]), margin_tol=float(cp["spectrum"]["margin_tol"]),
            sweep_R=tuple(float(x) for x in _linspace(R_min, R_max, n_R)),
            sweep_k=tuple(_ints(cp["sweep"]["k_range"])), sweep_M=int(cp["sweep"]["M"]),
            sweep_width=float(cp["sweep"]["width"]),
            eta=float(cp["landscape"]["eta"]), margin=float(cp["landscape"]["margin"]),
            n_ell=int(cp["landscape"]["n_ell"]), n_r=int(cp["landscape"]["n_r"]),
            k_ref=int(cp["landscape"]["k_ref"]),
            k_list=tuple(_ints(an["k_list"])),
            ell=None if an["ell"].strip() == "auto" else float(an["ell"]),
            r=None if an["r"].strip() == "auto" else float(an["r"]),
            L_max=int(an["L_max"]), density=int(an["density"]), slice_n=int(an["slice_n"]),
            expansion_k=tuple(_ints(ve["expansion_k"])), ablation_k=tuple(_ints(ve["ablation_k"])),
            symmetry_k=int(ve["symmetry_k"]), symmetry_probes=int(ve["symmetry_probes"]),
            stencil_k=int(ve["stencil_k"]), stencil_points=int(ve["stencil_points"]),
            quad_order=int(ve["quad_order"]), quad_check_order=int(ve["quad_check_order"]),
            quad_tol=float(ve["quad_tol"]),
            out_dir=out or os.environ.get(OUT_ENV) or cp["output"]["dir"],
            raw={s: dict(cp[s]) for s in cp.sections()},
        )
    except ValueError as exc:
        raise ConfigError(f"bad config value: {exc}") from exc
    _validate(cfg)
    return cfg


def _linspace(lo, hi, n):
    if n < 2:
        raise ConfigError("sweep needs n_R >= 2")
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def _validate(cfg: RunConfig) -> None:
    if not 0 < cfg.a < cfg.b:
        raise ConfigError(f"annulus requires 0 < a < b, got a={cfg.a}, b={cfg.b}")
    for name in ("radial_tol", "margin_tol", "sweep_width", "eta", "quad_tol"):
        if not getattr(cfg, name) > 0:
            raise ConfigError(f"tolerance {name} must be positive")
    for name in ("k_list", "expansion_k", "sweep_k"):
        seq = getattr(cfg, name)
        if not seq or list(seq) != sorted(seq):
            raise ConfigError(f"{name} must be non-empty and sorted ascending")
    if cfg.density < 1 or cfg.L_max < 1 or cfg.M < 10 or cfg.sweep_M < 10:
        raise ConfigError("density, L_max and M must be positive")
