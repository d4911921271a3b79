"""Run configuration: a flat `key = value` text format plus overrides.

Grammar, one directive per line:

    # comment
    key = value

Blank lines are skipped, `#` starts a comment (whole line only), keys are
the RunConfig field names, values parse by the field's type. Unknown or
duplicate keys are errors. Serialization writes fields in declaration
order and skips unset optionals, so parse -> serialize -> parse is the
identity.

Precedence, lowest to highest: built-in defaults, config file, command
line overrides, and finally the STYLEADV_SEED environment variable for
the seed alone.

Mode-dependent defaults (style weight beta, NES sigma, and attack step
eta) stay unset until `resolve`, which fills them for the chosen mode
and validates every constant.
"""

import dataclasses
import math
import os
from dataclasses import dataclass

from .errors import ConfigError

SEED_ENV_VAR = "STYLEADV_SEED"

BETA_TARGETED = 75.0
BETA_UNTARGETED = 50.0
SIGMA_TARGETED = 1e-6
SIGMA_UNTARGETED = 1e-3
ETA_TARGETED = 0.02
ETA_UNTARGETED = 0.002


@dataclass
class RunConfig:
    mode: str = "untargeted"
    target: int = None          # target class, required for targeted runs
    seed: int = 0
    themes: int = 3             # palette size C
    mu: float = 1e4             # confidence weight in the targeted criterion
    alpha: float = 10.0         # content weight
    beta: float = None          # style weight; mode default when unset
    gamma: float = 1e-3         # total-variation weight
    lam: float = 1e3            # temporal weight
    iterations: int = 300
    step: float = 0.05          # optimizer step size for the transfer
    n: int = 64                 # NES samples per estimate
    sigma: float = None         # NES smoothing; mode default when unset
    eta: float = None           # attack step size; mode default when unset
    tile_frames: int = 1        # NES probes share one per-frame direction
    eps_adv: float = 0.05
    query_limit: int = 300_000
    cone_radius: float = 50.0
    cone_height: float = 50.0 * math.sqrt(3.0)
    split_fraction: float = 0.7
    classifier: str = None      # "toy:<path>" or "remote:<host>:<port>"
    weights: str = None         # feature-net FWF path; packaged default when unset
    style_set: str = None       # directory written by build-styles


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_INT_FIELDS = {"target", "seed", "themes", "iterations", "n", "query_limit",
               "tile_frames"}
_STR_FIELDS = {"mode", "classifier", "weights", "style_set"}


def _parse_value(key, raw):
    raw = raw.strip()
    try:
        if key in _INT_FIELDS:
            return int(raw)
        if key in _STR_FIELDS:
            return raw
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def parse_config(text):
    cfg = RunConfig()
    seen = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        setattr(cfg, key, _parse_value(key, raw))
    return cfg


def read_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def serialize_config(cfg):
    lines = []
    for f in dataclasses.fields(RunConfig):
        value = getattr(cfg, f.name)
        if value is None:
            continue
        if isinstance(value, float):
            value = repr(value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def write_config(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_config(cfg))


def apply_overrides(cfg, pairs):
    """Apply `key=value` strings from the command line; these beat the file."""
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        key, _, raw = pair.partition("=")
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, key, _parse_value(key, raw))
    return cfg


def apply_env(cfg, environ=None):
    """STYLEADV_SEED, when set, wins over both file and flags for the seed."""
    environ = os.environ if environ is None else environ
    raw = environ.get(SEED_ENV_VAR)
    if raw is not None:
        try:
            cfg.seed = int(raw)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {raw!r}") from exc
    return cfg


def resolve(cfg):
    """Fill mode-dependent defaults and validate; returns a new RunConfig."""
    cfg = dataclasses.replace(cfg)
    if cfg.mode not in ("untargeted", "targeted"):
        raise ConfigError(f"mode must be untargeted or targeted, got {cfg.mode!r}")
    targeted = cfg.mode == "targeted"
    if cfg.beta is None:
        cfg.beta = BETA_TARGETED if targeted else BETA_UNTARGETED
    if cfg.sigma is None:
        cfg.sigma = SIGMA_TARGETED if targeted else SIGMA_UNTARGETED
    if cfg.eta is None:
        cfg.eta = ETA_TARGETED if targeted else ETA_UNTARGETED
    if targeted and cfg.target is None:
        raise ConfigError("targeted mode needs a target class")
    positives = ("themes", "mu", "alpha", "beta", "gamma", "lam", "iterations",
                 "step", "n", "sigma", "eta", "eps_adv", "query_limit",
                 "cone_radius", "cone_height", "split_fraction")
    for name in positives:
        value = getattr(cfg, name)
        if not value > 0:
            raise ConfigError(f"{name} must be positive, got {value}")
    if not cfg.split_fraction < 1:
        raise ConfigError(f"split_fraction must be below 1, got {cfg.split_fraction}")
    if cfg.n % 2:
        raise ConfigError(f"n must be even, got {cfg.n}")
    if cfg.tile_frames not in (0, 1):
        raise ConfigError(f"tile_frames must be 0 or 1, got {cfg.tile_frames}")
    if cfg.target is not None and cfg.target < 0:
        raise ConfigError(f"target must be a class index, got {cfg.target}")
    return cfg


def load_config(path=None, overrides=None, environ=None):
    """File (optional) -> overrides -> environment, then resolve."""
    cfg = read_config(path) if path else RunConfig()
    apply_overrides(cfg, overrides)
    apply_env(cfg, environ)
    return resolve(cfg)
