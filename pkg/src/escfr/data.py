"""Synthetic causal datasets, CSV ingestion, and the split protocol.

The CSV schema is ``x0,...,x{d-1},t,y[,mu0,mu1]`` with UTF-8 text, ``.``
decimals, and floats written with full round-trip precision, so save/load
is bit-exact.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    DataParseError,
    DataValidationError,
    GenerationError,
    SchemaError,
    SplitError,
)
from .validation import as_float_array, as_matrix, check_binary_treatment


@dataclass(frozen=True)
class CausalDataset:
    """Covariates, binary treatment, factual outcome, and (optionally) the
    noiseless potential outcomes used only for evaluation."""

    x: np.ndarray
    t: np.ndarray
    y: np.ndarray
    mu0: np.ndarray = None
    mu1: np.ndarray = None

    def __post_init__(self):
        x = as_matrix(self.x, "x")
        t = check_binary_treatment(self.t)
        y = as_float_array(self.y, "y", ndim=1)
        n = len(x)
        if len(t) != n or len(y) != n:
            raise DataValidationError(
                f"inconsistent lengths: x={n}, t={len(t)}, y={len(y)}"
            )
        if not (np.any(t == 1) and np.any(t == 0)):
            raise DataValidationError("dataset must contain both treatment groups")
        if (self.mu0 is None) != (self.mu1 is None):
            raise DataValidationError("mu0 and mu1 must be supplied together")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "y", y)
        if self.mu0 is not None:
            mu0 = as_float_array(self.mu0, "mu0", ndim=1)
            mu1 = as_float_array(self.mu1, "mu1", ndim=1)
            if len(mu0) != n or len(mu1) != n:
                raise DataValidationError("mu0/mu1 lengths do not match x")
            object.__setattr__(self, "mu0", mu0)
            object.__setattr__(self, "mu1", mu1)

    def __len__(self):
        return len(self.y)

    @property
    def n_features(self):
        return self.x.shape[1]

    @property
    def tau(self):
        """True per-unit effect, available when potential outcomes are."""
        if self.mu0 is None:
            return None
        return self.mu1 - self.mu0

    def subset(self, indices):
        indices = np.asarray(indices)
        return CausalDataset(
            self.x[indices],
            self.t[indices],
            self.y[indices],
            None if self.mu0 is None else self.mu0[indices],
            None if self.mu1 is None else self.mu1[indices],
        )


@dataclass(frozen=True)
class GenSpec:
    """Knobs of the synthetic generator.

    ``bias_strength`` tilts treatment assignment along a fixed covariate
    direction (selection bias); ``hidden_strength`` routes an unobserved
    variable into both the assignment and the outcomes (hidden confounding).
    """

    n: int
    d: int
    bias_strength: float = 0.0
    hidden_strength: float = 0.0
    noise_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 4:
            raise ConfigError(f"N must be >= 4, got {self.n}")
        if self.d < 1:
            raise ConfigError(f"d must be >= 1, got {self.d}")
        if self.bias_strength < 0:
            raise ConfigError(f"bias_strength must be >= 0, got {self.bias_strength}")
        if self.hidden_strength < 0:
            raise ConfigError(f"hidden_strength must be >= 0, got {self.hidden_strength}")
        if self.noise_std < 0:
            raise ConfigError(f"noise_std must be >= 0, got {self.noise_std}")

    def to_json_dict(self):
        return {
            "N": self.n,
            "d": self.d,
            "bias_strength": self.bias_strength,
            "hidden_strength": self.hidden_strength,
            "noise_std": self.noise_std,
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, raw):
        if not isinstance(raw, dict):
            raise ConfigError("generator spec must be a JSON object")
        known = {"N", "d", "bias_strength", "hidden_strength", "noise_std", "seed"}
        for key in raw:
            if key not in known:
                raise ConfigError(f"unknown generator spec field {key!r}")
        for key in ("N", "d"):
            if key not in raw:
                raise ConfigError(f"generator spec is missing field {key!r}")
        try:
            return cls(
                n=int(raw["N"]),
                d=int(raw["d"]),
                bias_strength=float(raw.get("bias_strength", 0.0)),
                hidden_strength=float(raw.get("hidden_strength", 0.0)),
                noise_std=float(raw.get("noise_std", 1.0)),
                seed=int(raw.get("seed", 0)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad generator spec value: {exc}") from exc


def generate_synthetic(spec):
    """Draw a dataset with controllable selection bias and hidden confounding.

    Covariates are standard normal. Treatment follows
    ``p(T=1 | x, h) = logistic(bias_strength * theta.x + hidden_strength * h)``
    where ``theta`` points along the linear outcome direction, so selection
    bias shifts outcome-relevant covariates between groups. The untreated
    surface is linear plus a sine bend; the effect is heterogeneous
    (``1 + x_0``); the hidden variable ``h`` enters both potential outcomes
    additively and monotonically.
    """
    rng = np.random.default_rng(spec.seed)
    w_lin = rng.normal(size=spec.d) / np.sqrt(spec.d)
    w_sin = rng.normal(size=spec.d) / np.sqrt(spec.d)
    theta = w_lin / np.linalg.norm(w_lin)

    for _ in range(10):
        x = rng.normal(size=(spec.n, spec.d))
        hidden = rng.normal(size=spec.n)
        logits = spec.bias_strength * (x @ theta) + spec.hidden_strength * hidden
        p_treat = 1.0 / (1.0 + np.exp(-logits))
        t = (rng.uniform(size=spec.n) < p_treat).astype(np.int64)
        if np.any(t == 1) and np.any(t == 0):
            break
    else:
        raise GenerationError("could not draw a dataset with both groups in 10 attempts")

    mu0 = x @ w_lin + np.sin(x @ w_sin) + spec.hidden_strength * hidden
    tau = 1.0 + x[:, 0]
    mu1 = mu0 + tau
    noise = spec.noise_std * rng.normal(size=spec.n)
    y = np.where(t == 1, mu1, mu0) + noise
    return CausalDataset(x, t, y, mu0, mu1)


# ---------------------------------------------------------------------------
# CSV round trip
# ---------------------------------------------------------------------------


def _format_float(value):
    return repr(float(value))


def save_dataset_csv(dataset, path):
    """Write the dataset with full float precision (load reproduces it
    bit-exactly)."""
    d = dataset.n_features
    header = [f"x{i}" for i in range(d)] + ["t", "y"]
    with_mu = dataset.mu0 is not None
    if with_mu:
        header += ["mu0", "mu1"]
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in range(len(dataset)):
            cells = [_format_float(v) for v in dataset.x[row]]
            cells.append(str(int(dataset.t[row])))
            cells.append(_format_float(dataset.y[row]))
            if with_mu:
                cells.append(_format_float(dataset.mu0[row]))
                cells.append(_format_float(dataset.mu1[row]))
            writer.writerow(cells)


def load_dataset_csv(path):
    """Parse a dataset CSV, validating the schema and every cell."""
    with open(path, "r", newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected a header row") from None
        rows = list(reader)

    d = 0
    while d < len(header) and header[d] == f"x{d}":
        d += 1
    if d == 0:
        raise SchemaError(f"{path}: missing column 'x0'")
    remaining = header[d:]
    if remaining[:2] != ["t", "y"]:
        missing = "t" if not remaining or remaining[0] != "t" else "y"
        raise SchemaError(f"{path}: missing column '{missing}'")
    trailing = remaining[2:]
    if trailing not in ([], ["mu0", "mu1"]):
        raise SchemaError(
            f"{path}: trailing columns must be exactly ['mu0', 'mu1'], got {trailing}"
        )
    with_mu = bool(trailing)
    n_cols = len(header)
    if not rows:
        raise SchemaError(f"{path}: no data rows")

    parsed = np.empty((len(rows), n_cols))
    for i, row in enumerate(rows):
        if len(row) != n_cols:
            raise SchemaError(
                f"{path}: row {i + 2} has {len(row)} cells, expected {n_cols}"
            )
        for j, cell in enumerate(row):
            try:
                parsed[i, j] = float(cell)
            except ValueError:
                raise DataParseError(
                    f"{path}: non-numeric value {cell!r} at row {i + 2}, column {header[j]!r}"
                ) from None

    x = parsed[:, :d]
    t_raw = parsed[:, d]
    if not np.all(np.isin(t_raw, (0.0, 1.0))):
        bad = int(np.flatnonzero(~np.isin(t_raw, (0.0, 1.0)))[0])
        raise DataValidationError(
            f"{path}: treatment outside {{0,1}} at row {bad + 2}"
        )
    y = parsed[:, d + 1]
    mu0 = parsed[:, d + 2] if with_mu else None
    mu1 = parsed[:, d + 3] if with_mu else None
    return CausalDataset(x, t_raw.astype(np.int64), y, mu0, mu1)


# ---------------------------------------------------------------------------
# Split protocol
# ---------------------------------------------------------------------------


def _allocate(count, ratios):
    """Largest-remainder split of ``count`` items into len(ratios) parts."""
    quotas = np.asarray(ratios, dtype=np.float64) * count
    counts = np.floor(quotas).astype(np.int64)
    remainder = count - int(counts.sum())
    if remainder:
        order = np.argsort(-(quotas - counts), kind="stable")
        counts[order[:remainder]] += 1
    return counts


def split_dataset(dataset, ratios=(0.7, 0.15, 0.15), seed=0):
    """Stratified exact partition into train/validation/test.

    Each group is shuffled (deterministically per seed) and allocated by
    largest remainder, keeping every split's treated fraction within one
    unit of the global fraction.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) < 2 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"ratios must be positive and sum to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    parts = [[] for _ in ratios]
    for group in (1, 0):
        members = np.flatnonzero(dataset.t == group)
        counts = _allocate(len(members), ratios)
        if np.any(counts == 0):
            raise SplitError(
                f"treatment group {group} has {len(members)} units, too few to "
                f"place at least one in each of {len(ratios)} splits"
            )
        shuffled = rng.permutation(members)
        offset = 0
        for part, count in zip(parts, counts):
            part.extend(shuffled[offset : offset + count].tolist())
            offset += count
    return tuple(dataset.subset(np.sort(np.asarray(part))) for part in parts)
