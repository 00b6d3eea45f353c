import hashlib
import json
import logging

import numpy as np
from pydantic import ValidationError

from core.config import (
    DEFAULT_EPSILON0,
    TOL_HERMITIAN,
    TOL_UNITARY,
    UPSILON_MIN,
    VALIDATION_SAMPLES,
    XI_MIN,
)
from core.exceptions import ConfigError
from matcore import service as mc
from model.model import AdmissibleRange, CoefficientMap, CostSpec, SystemModel, Violation
from model.schemas import RunConfig

logger = logging.getLogger("model")

BUILTIN_MODELS = ("decay_homodyne", "decay_counting", "coherent_feedback", "adaptive_measurement")
DEFAULT_MODES = {
    "decay_homodyne": "diffusive",
    "decay_counting": "counting",
    "coherent_feedback": "diffusive",
    "adaptive_measurement": "diffusive",
}
DEFAULT_CONTROL_LEVELS = 11


# -----------------------------
# Bloch coordinates (dim 2)
# -----------------------------

def bloch_to_matrix(v) -> np.ndarray:
    """rho = (I + x sx + y sy + z sz) / 2, batched over leading axes."""
    v = np.asarray(v, dtype=float)
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    rho = np.empty(v.shape[:-1] + (2, 2), dtype=np.complex128)
    rho[..., 0, 0] = 0.5 * (1 + z)
    rho[..., 1, 1] = 0.5 * (1 - z)
    rho[..., 0, 1] = 0.5 * (x - 1j * y)
    rho[..., 1, 0] = 0.5 * (x + 1j * y)
    return rho


def matrix_to_bloch(rho) -> np.ndarray:
    rho = np.asarray(rho)
    x = 2 * np.real(rho[..., 1, 0])
    y = 2 * np.imag(rho[..., 1, 0])
    z = np.real(rho[..., 0, 0] - rho[..., 1, 1])
    return np.stack([x, y, z], axis=-1)


# -----------------------------
# Builtin models
# -----------------------------

def default_range(u_max: float, control_grid=None) -> AdmissibleRange:
    if control_grid is None:
        control_grid = np.linspace(-u_max, u_max, DEFAULT_CONTROL_LEVELS)
    return AdmissibleRange(-float(u_max), float(u_max), tuple(float(u) for u in control_grid))


def builtin_model(name: str, params: dict | None = None, mode: str | None = None, rho0=None, control_grid=None) -> SystemModel:
    params = dict(params or {})
    if name not in BUILTIN_MODELS:
        raise ConfigError(f"unknown model '{name}'")

    gamma = float(params.get("gamma", 1.0))
    u_max = float(params.get("u_max", 5.0))
    dim = int(params.get("dim", 2))
    if gamma <= 0:
        raise ConfigError("gamma must be positive")
    if u_max <= 0:
        raise ConfigError("u_max must be positive")
    if dim != 2:
        raise ConfigError("builtin models are qubit models (dim=2)")

    mode = mode or DEFAULT_MODES[name]
    if mode not in ("diffusive", "counting"):
        raise ConfigError(f"unknown observation mode '{mode}'")

    zero = np.zeros((2, 2), dtype=np.complex128)
    l0 = np.sqrt(gamma) * mc.SIGMA_MINUS
    l1, h0, h1 = zero, zero, zero
    phase_rate = 0.0

    if name in ("decay_homodyne", "decay_counting"):
        h1 = mc.PAULI_Y.copy()
    elif name == "coherent_feedback":
        l1 = np.eye(2, dtype=np.complex128)
    elif name == "adaptive_measurement":
        h0 = float(params.get("omega", 1.0)) * mc.PAULI_X
        phase_rate = 1.0

    if mode == "diffusive":
        xi0, upsilon0 = 0.0, 1.0
    elif name == "adaptive_measurement":
        xi0, upsilon0 = 1.0, float(params.get("alpha", 1.0))
    else:
        xi0, upsilon0 = 1.0, float(params.get("epsilon0", DEFAULT_EPSILON0))

    coeffs = CoefficientMap(
        l0=mc.as_matrix(l0),
        l1=mc.as_matrix(l1),
        h0=mc.as_matrix(h0),
        h1=mc.as_matrix(h1),
        scattering=mc.identity(2),
        xi0=xi0,
        upsilon0=upsilon0,
        phase_rate=phase_rate,
    )
    if rho0 is None:
        rho0 = mc.EXCITED
    return SystemModel(
        name=name,
        coeffs=coeffs,
        mode=mode,
        range=default_range(u_max, control_grid),
        rho0=mc.as_matrix(rho0),
        params=params,
    )


def constant_model(l, h, mode: str = "diffusive", xi: float = 0.0, upsilon: complex = 1.0, rho0=None, u_max: float = 1.0, control_grid=None, name: str = "custom") -> SystemModel:
    """Model with u-independent coefficients (frozen dynamics, test fixtures)."""
    l = mc.as_matrix(l)
    zero = np.zeros_like(l)
    coeffs = CoefficientMap(
        l0=l,
        l1=mc.as_matrix(zero),
        h0=mc.as_matrix(h),
        h1=mc.as_matrix(zero),
        scattering=mc.identity(l.shape[-1]),
        xi0=xi,
        upsilon0=upsilon,
    )
    if rho0 is None:
        rho0 = np.eye(l.shape[-1]) / l.shape[-1]
    return SystemModel(name, coeffs, mode, default_range(u_max, control_grid), mc.as_matrix(rho0))


# -----------------------------
# Validation
# -----------------------------

def control_sample(model: SystemModel, n: int = VALIDATION_SAMPLES) -> np.ndarray:
    sample = np.linspace(model.range.u_min, model.range.u_max, n)
    return np.union1d(sample, np.asarray(model.range.grid, dtype=float))


def validate(model: SystemModel, upsilon_min: float = UPSILON_MIN, xi_min: float = XI_MIN) -> list[Violation]:
    out: list[Violation] = list(model.range.violations())
    c = model.coeffs
    u = control_sample(model)
    d = model.dim

    shapes = {"L": c.l(u).shape, "H": c.h(u).shape, "S": c.s(u).shape, "rho0": (u.size,) + np.shape(model.rho0)}
    for key, shape in shapes.items():
        if shape[-2:] != (d, d):
            out.append(Violation("dim_mismatch", f"{key} has shape {shape[-2:]}, expected ({d}, {d})"))
    if out and any(v.code == "dim_mismatch" for v in out):
        return out

    if not mc.is_hermitian(c.h(u), TOL_HERMITIAN):
        out.append(Violation("h_not_hermitian", "H(u) is not hermitian on the control sample"))
    if not mc.is_unitary(c.s(u), TOL_UNITARY):
        out.append(Violation("s_not_unitary", "S(u) is not unitary on the control sample"))

    xi = np.abs(c.xi(u))
    ups = np.abs(c.upsilon(u))
    if model.mode == "diffusive":
        if np.any(xi != 0):
            out.append(Violation("xi_nonzero", "diffusive observation requires Xi = 0"))
        if np.any(ups < upsilon_min):
            bad = u[np.argmin(ups)]
            out.append(Violation("upsilon_nonzero", f"|Upsilon(u)| < {upsilon_min} at u={bad:g}"))
    elif model.mode == "counting":
        if np.any(xi < xi_min):
            bad = u[np.argmin(xi)]
            out.append(Violation("xi_invertible", f"|Xi(u)| < {xi_min} at u={bad:g}"))
    else:
        out.append(Violation("mode_unknown", f"unknown observation mode '{model.mode}'"))

    if not mc.is_density_matrix(model.rho0):
        out.append(Violation("rho0_invalid", "rho0 is not a density matrix"))
    return out


def validate_cost(cost: CostSpec, model: SystemModel) -> list[Violation]:
    out = []
    d = model.dim
    if cost.running_base.shape != (d, d) or cost.terminal.shape != (d, d):
        return [Violation("dim_mismatch", "cost matrices do not match the system dimension")]
    if not mc.is_positive_semidefinite(cost.running(control_sample(model)), TOL_HERMITIAN):
        out.append(Violation("cost_not_positive", "running cost C(u) is not positive"))
    if not mc.is_positive_semidefinite(cost.terminal, TOL_HERMITIAN):
        out.append(Violation("cost_not_positive", "terminal cost is not positive"))
    return out


# -----------------------------
# Configuration documents
# -----------------------------

def parse_matrix(spec) -> np.ndarray:
    rows = []
    for row in spec:
        rows.append([complex(e[0], e[1]) if isinstance(e, (tuple, list)) else complex(e) for e in row])
    return mc.as_matrix(rows)


def _set_path(doc: dict, path: str, value):
    keys = path.split(".")
    node = doc
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override '{path}': '{key}' is not a section")
    node[keys[-1]] = value


def apply_overrides(document: dict, overrides=()) -> dict:
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not KEY=VALUE")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        _set_path(document, key.strip(), value)
    return document


def parse_config(text: str, overrides=(), seed: int | None = None) -> RunConfig:
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"parse error at line {e.lineno}, column {e.colno}: {e.msg}")
    if not isinstance(document, dict):
        raise ConfigError("configuration must be a JSON object")

    apply_overrides(document, overrides)
    if seed is not None:
        _set_path(document, "run.seed", int(seed))

    try:
        return RunConfig.model_validate(document)
    except ValidationError as e:
        err = e.errors()[0]
        field = ".".join(str(p) for p in err["loc"])
        raise ConfigError(f"invalid field '{field}': {err['msg']}")


def build_model(config: RunConfig) -> SystemModel:
    section = config.model
    rho0 = None
    if section.rho0 is not None:
        rho0 = bloch_to_matrix(section.rho0.bloch) if section.rho0.bloch is not None else parse_matrix(section.rho0.matrix)
    return builtin_model(
        section.name,
        section.params.model_dump(),
        mode=section.mode,
        rho0=rho0,
        control_grid=config.bellman.control_grid,
    )


def build_cost(config: RunConfig) -> CostSpec:
    return CostSpec(
        running_base=parse_matrix(config.cost.running_base),
        terminal=parse_matrix(config.cost.terminal),
        control_penalty=config.cost.control_penalty,
    )


def load_config(text: str, overrides=(), seed: int | None = None):
    """
    Parse and validate a run configuration document.
    Returns (SystemModel, CostSpec, RunConfig).
    """
    config = parse_config(text, overrides, seed)
    model = build_model(config)
    cost = build_cost(config)

    violations = validate(model) + validate_cost(cost, model)
    if violations:
        raise ConfigError("; ".join(f"{v.code}: {v.detail}" for v in violations))

    run = config.run
    steps = run.T / run.dt
    if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
        raise ConfigError("invalid field 'run.dt': T/dt must be an integer")

    logger.info(f"loaded model {model.name} ({model.mode}), dim {model.dim}")
    return model, cost, config


def emit_config(config: RunConfig) -> str:
    return json.dumps(config.model_dump(mode="json"), sort_keys=True, indent=2)


def config_hash(config: RunConfig) -> str:
    return hashlib.sha256(emit_config(config).encode("utf-8")).hexdigest()
