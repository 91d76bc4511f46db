"""Experiment configuration: INI-style text files with strict validation.

The format is plain `key = value` lines under `[section]` headers, parsed
with configparser.  Every key is validated against the module invariants
before any computation starts, and unknown sections or keys are rejected
outright; error messages name the offending `section.key`.
"""

import configparser
import io
from dataclasses import dataclass

from .errors import ConfigurationError
from .grid import GridSpec
from .nse import PhysicsSetup, forcing_preset, initial_velocity_preset
from .observation import KINDS
from .optim import ContinuationSchedule, OptimOptions


class ConfigFieldError(ConfigurationError):
    """Validation failure tied to one named configuration field."""

    def __init__(self, fieldname, message):
        self.fieldname = fieldname
        super().__init__(f"{fieldname}: {message}")


_SCHEMA = {
    "grid": {"nx", "ny", "nt", "lx", "ly", "t_end"},
    "physics": {"nu", "lambda", "forcing", "forcing_amplitude",
                "u0", "u0_amplitude", "ref_tol", "ref_sweeps"},
    "observation": {"kind", "mask_stride", "noise_amplitude", "seed"},
    "schedule": {"p_list", "warm_start"},
    "optimizer": {"max_iters", "grad_tol", "memory"},
    "output": {"directory", "plots"},
}


@dataclass
class ExperimentConfig:
    nx: int = 16
    ny: int = 16
    nt: int = 12
    lx: float = 1.0
    ly: float = 1.0
    t_end: float = 0.36

    nu: float = 0.002
    lam: float = 0.5
    forcing: str = "none"
    forcing_amplitude: float = 0.0
    u0: str = "vortex"
    u0_amplitude: float = 0.15
    ref_tol: float = None
    ref_sweeps: int = 3

    kind: str = "masked-velocity"
    mask_stride: int = 4
    noise_amplitude: float = 0.0
    seed: int = 1234

    p_list: tuple = (2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0)
    warm_start: bool = True

    max_iters: int = 500
    grad_tol: float = 1e-6
    memory: int = 10

    directory: str = "runs/out"
    plots: bool = True

    def validate(self):
        """Run every module invariant; raise ConfigFieldError on the first hit."""
        try:
            grid = GridSpec(self.nx, self.ny, self.nt, self.lx, self.ly, self.t_end)
        except ConfigurationError as exc:
            raise ConfigFieldError("grid", str(exc)) from exc
        if not (0.01 < self.lam < 0.99):
            raise ConfigFieldError("physics.lambda",
                                   f"must lie in (0.01, 0.99), got {self.lam}")
        if self.nu <= 0.0:
            raise ConfigFieldError("physics.nu", f"must be positive, got {self.nu}")
        if self.forcing not in ("none", "swirl"):
            raise ConfigFieldError("physics.forcing", f"unknown preset {self.forcing!r}")
        if self.u0 not in ("zero", "vortex"):
            raise ConfigFieldError("physics.u0", f"unknown preset {self.u0!r}")
        if self.ref_sweeps < 1:
            raise ConfigFieldError("physics.ref_sweeps", "must be >= 1")
        if self.kind not in KINDS:
            raise ConfigFieldError("observation.kind", f"unknown kind {self.kind!r}")
        if self.mask_stride < 1:
            raise ConfigFieldError("observation.mask_stride", "must be >= 1")
        if self.noise_amplitude < 0.0:
            raise ConfigFieldError("observation.noise_amplitude", "must be >= 0")
        try:
            ContinuationSchedule(self.p_list, self.warm_start)
        except ConfigurationError as exc:
            raise ConfigFieldError("schedule.p_list", str(exc)) from exc
        try:
            OptimOptions(max_iters=self.max_iters, grad_tol=self.grad_tol,
                         memory=self.memory)
        except ConfigurationError as exc:
            raise ConfigFieldError("optimizer", str(exc)) from exc
        try:
            self.build_setup(grid)
        except ConfigurationError as exc:
            raise ConfigFieldError("physics", str(exc)) from exc
        return grid

    def build_setup(self, grid=None):
        grid = grid or GridSpec(self.nx, self.ny, self.nt, self.lx, self.ly, self.t_end)
        return PhysicsSetup(
            grid=grid, nu=self.nu, lam=self.lam,
            f=forcing_preset(grid, self.forcing, self.forcing_amplitude),
            u0=initial_velocity_preset(grid, self.u0, self.u0_amplitude))

    def schedule(self):
        return ContinuationSchedule(self.p_list, self.warm_start)

    def optim_options(self):
        return OptimOptions(max_iters=self.max_iters, grad_tol=self.grad_tol,
                            memory=self.memory)

    def to_ini(self):
        """Deterministic text echo of the resolved configuration."""
        lines = []
        values = {
            "grid": [("nx", self.nx), ("ny", self.ny), ("nt", self.nt),
                     ("lx", repr(self.lx)), ("ly", repr(self.ly)),
                     ("t_end", repr(self.t_end))],
            "physics": [("nu", repr(self.nu)), ("lambda", repr(self.lam)),
                        ("forcing", self.forcing),
                        ("forcing_amplitude", repr(self.forcing_amplitude)),
                        ("u0", self.u0), ("u0_amplitude", repr(self.u0_amplitude)),
                        ("ref_sweeps", self.ref_sweeps)]
            + ([("ref_tol", repr(self.ref_tol))] if self.ref_tol is not None else []),
            "observation": [("kind", self.kind), ("mask_stride", self.mask_stride),
                            ("noise_amplitude", repr(self.noise_amplitude)),
                            ("seed", self.seed)],
            "schedule": [("p_list", ",".join(repr(p) for p in self.p_list)),
                         ("warm_start", str(self.warm_start).lower())],
            "optimizer": [("max_iters", self.max_iters),
                          ("grad_tol", repr(self.grad_tol)),
                          ("memory", self.memory)],
            "output": [("directory", self.directory),
                       ("plots", str(self.plots).lower())],
        }
        for section, pairs in values.items():
            lines.append(f"[{section}]")
            for key, val in pairs:
                lines.append(f"{key} = {val}")
            lines.append("")
        return "\n".join(lines)


def _get(parser, section, key, cast, fieldname):
    raw = parser.get(section, key)
    try:
        return cast(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigFieldError(fieldname, f"cannot parse {raw!r}") from exc


def _bool(raw):
    low = raw.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(raw)


def _p_list(raw):
    return tuple(float(tok) for tok in raw.split(",") if tok.strip())


def load_config(text=None, path=None):
    """Parse and validate a configuration from text or a file path."""
    parser = configparser.ConfigParser()
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    if text is None:
        text = ""
    try:
        parser.read_file(io.StringIO(text))
    except configparser.Error as exc:
        raise ConfigFieldError("file", f"malformed configuration: {exc}") from exc

    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigFieldError(section, "unknown section")
        for key in parser.options(section):
            if key not in _SCHEMA[section]:
                raise ConfigFieldError(f"{section}.{key}", "unknown key")

    cfg = ExperimentConfig()
    casts = {
        ("grid", "nx"): ("nx", int), ("grid", "ny"): ("ny", int),
        ("grid", "nt"): ("nt", int), ("grid", "lx"): ("lx", float),
        ("grid", "ly"): ("ly", float), ("grid", "t_end"): ("t_end", float),
        ("physics", "nu"): ("nu", float), ("physics", "lambda"): ("lam", float),
        ("physics", "forcing"): ("forcing", str),
        ("physics", "forcing_amplitude"): ("forcing_amplitude", float),
        ("physics", "u0"): ("u0", str),
        ("physics", "u0_amplitude"): ("u0_amplitude", float),
        ("physics", "ref_tol"): ("ref_tol", float),
        ("physics", "ref_sweeps"): ("ref_sweeps", int),
        ("observation", "kind"): ("kind", str),
        ("observation", "mask_stride"): ("mask_stride", int),
        ("observation", "noise_amplitude"): ("noise_amplitude", float),
        ("observation", "seed"): ("seed", int),
        ("schedule", "p_list"): ("p_list", _p_list),
        ("schedule", "warm_start"): ("warm_start", _bool),
        ("optimizer", "max_iters"): ("max_iters", int),
        ("optimizer", "grad_tol"): ("grad_tol", float),
        ("optimizer", "memory"): ("memory", int),
        ("output", "directory"): ("directory", str),
        ("output", "plots"): ("plots", _bool),
    }
    for (section, key), (attr, cast) in casts.items():
        if parser.has_option(section, key):
            setattr(cfg, attr, _get(parser, section, key, cast,
                                    f"{section}.{key}"))
    cfg.validate()
    return cfg


def apply_override(cfg, dotted_key, raw_value):
    """Set one `section.key` from a string value, with validation."""
    known = {f"{s}.{k}" for s, keys in _SCHEMA.items() for k in keys}
    if dotted_key not in known:
        raise ConfigFieldError(dotted_key, "unknown parameter")
    section, key = dotted_key.split(".", 1)
    base = cfg.to_ini()
    parser = configparser.ConfigParser()
    parser.read_string(base)
    if not parser.has_section(section):
        parser.add_section(section)
    parser.set(section, key, raw_value)
    out = io.StringIO()
    parser.write(out)
    return load_config(text=out.getvalue())
