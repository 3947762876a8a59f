"""Categorical and quantile value distributions.

Everything here is a pure function of immutable inputs.  A
`CategoricalDist` is a set of probability masses on a strictly ascending
atom grid; divergences between two of them require the grids to be
identical (no implicit re-gridding).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AbsoluteContinuity, AtomMismatch, EpsilonOutOfRange

__all__ = [
    "CategoricalDist",
    "QuantileDist",
    "Decomposition",
    "uniform_grid",
    "point_mass",
    "expectation",
    "variance",
    "entropy",
    "kl_divergence",
    "cross_entropy",
    "total_variation",
    "wasserstein",
    "cramer_distance",
    "project_categorical",
    "project_probs",
    "expectation_bin",
    "decompose_exact",
    "mix_with_dirac",
    "quantile_expectation",
    "to_text",
    "from_text",
]

PROB_TOL = 1e-9
_SNAP_TOL = 1e-9


def _frozen(x) -> np.ndarray:
    a = np.array(x, dtype=float, copy=True).reshape(-1)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CategoricalDist:
    """Probability masses ``probs`` placed on ascending ``atoms``."""

    atoms: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        atoms = _frozen(self.atoms)
        probs = _frozen(self.probs)
        if atoms.size == 0 or atoms.shape != probs.shape:
            raise ValueError(
                f"atoms and probs must be nonempty and equally long, got {atoms.size} and {probs.size}"
            )
        if not np.all(np.isfinite(atoms)) or not np.all(np.isfinite(probs)):
            raise ValueError("atoms and probs must be finite")
        if np.any(np.diff(atoms) <= 0):
            raise ValueError("atoms must be strictly ascending")
        if np.any(probs < 0):
            raise ValueError("probs must be nonnegative")
        if abs(probs.sum() - 1.0) > PROB_TOL:
            raise ValueError(f"probs must sum to 1, got {probs.sum()!r}")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "probs", probs)

    def __len__(self):
        return self.atoms.size

    def __eq__(self, other):
        if not isinstance(other, CategoricalDist):
            return NotImplemented
        return np.array_equal(self.atoms, other.atoms) and np.array_equal(self.probs, other.probs)

    __hash__ = None

    def __repr__(self):
        return f"CategoricalDist(atoms={self.atoms.tolist()}, probs={self.probs.tolist()})"

    def cdf(self, x) -> np.ndarray:
        """Right-continuous CDF evaluated at ``x``."""
        c = np.cumsum(self.probs)
        idx = np.searchsorted(self.atoms, np.asarray(x, dtype=float), side="right")
        return np.where(idx > 0, c[np.maximum(idx - 1, 0)], 0.0)

    def cdf_left(self, x) -> np.ndarray:
        """Left limit F(x-) of the CDF."""
        c = np.cumsum(self.probs)
        idx = np.searchsorted(self.atoms, np.asarray(x, dtype=float), side="left")
        return np.where(idx > 0, c[np.maximum(idx - 1, 0)], 0.0)

    def same_grid(self, other: "CategoricalDist") -> bool:
        return np.array_equal(self.atoms, other.atoms)


@dataclass(frozen=True, eq=False)
class QuantileDist:
    """Quantile values at ascending fractions in (0, 1]."""

    fractions: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        fr = _frozen(self.fractions)
        va = _frozen(self.values)
        if fr.size == 0 or fr.shape != va.shape:
            raise ValueError("fractions and values must be nonempty and equally long")
        if np.any(np.diff(fr) <= 0) or fr[0] <= 0.0 or fr[-1] > 1.0:
            raise ValueError("fractions must be strictly ascending within (0, 1]")
        if np.any(np.diff(va) < 0):
            raise ValueError("values must be nondecreasing")
        object.__setattr__(self, "fractions", fr)
        object.__setattr__(self, "values", va)


@dataclass(frozen=True)
class Decomposition:
    """Split of a categorical distribution into a Dirac at its expectation
    bin (weight ``1 - epsilon``) and a remainder ``mu`` (weight ``epsilon``)."""

    epsilon: float
    expectation: float
    mu: CategoricalDist
    bin: int
    clipped: bool = field(default=False)

    def reconstruct(self) -> CategoricalDist:
        probs = self.epsilon * self.mu.probs
        probs[self.bin] += 1.0 - self.epsilon
        return CategoricalDist(self.mu.atoms, probs)


def uniform_grid(vmin: float, vmax: float, n: int) -> np.ndarray:
    if n == 1:
        return np.array([float(vmin)])
    return np.linspace(vmin, vmax, n)


def point_mass(atoms, index: int) -> CategoricalDist:
    probs = np.zeros(len(atoms))
    probs[index] = 1.0
    return CategoricalDist(atoms, probs)


def expectation(d: CategoricalDist) -> float:
    return float(np.dot(d.atoms, d.probs))


def variance(d: CategoricalDist) -> float:
    m = expectation(d)
    return float(np.dot(d.probs, (d.atoms - m) ** 2))


def entropy(d: CategoricalDist) -> float:
    p = d.probs[d.probs > 0]
    return float(-np.sum(p * np.log(p)))


def _check_grid(p: CategoricalDist, q: CategoricalDist):
    if not p.same_grid(q):
        raise AtomMismatch("distributions are defined on different atom grids")


def cross_entropy(p: CategoricalDist, q: CategoricalDist) -> float:
    """-sum_i p_i log q_i over the bins where p is positive."""
    _check_grid(p, q)
    support = p.probs > 0
    if np.any(q.probs[support] <= 0):
        raise AbsoluteContinuity("q has zero mass on a bin where p is positive")
    return float(-np.sum(p.probs[support] * np.log(q.probs[support])))


def kl_divergence(p: CategoricalDist, q: CategoricalDist) -> float:
    _check_grid(p, q)
    support = p.probs > 0
    if np.any(q.probs[support] <= 0):
        raise AbsoluteContinuity("q has zero mass on a bin where p is positive")
    ps = p.probs[support]
    # sum of p*log(p/q) can round to a tiny negative number
    return max(float(np.sum(ps * np.log(ps / q.probs[support]))), 0.0)


def total_variation(p: CategoricalDist, q: CategoricalDist) -> float:
    _check_grid(p, q)
    return float(0.5 * np.abs(p.probs - q.probs).sum())


def _quantile_steps(d: CategoricalDist, taus: np.ndarray) -> np.ndarray:
    c = np.cumsum(d.probs)
    idx = np.searchsorted(c, taus, side="left")
    return d.atoms[np.minimum(idx, d.atoms.size - 1)]


def wasserstein(p: CategoricalDist, q: CategoricalDist, order: int = 1) -> float:
    """Exact W_order distance via the two step-shaped inverse CDFs."""
    if order < 1:
        raise ValueError("order must be a positive integer")
    cuts = np.unique(np.concatenate([[0.0, 1.0], np.cumsum(p.probs), np.cumsum(q.probs)]))
    cuts = cuts[(cuts >= 0.0) & (cuts <= 1.0)]
    widths = np.diff(cuts)
    mids = 0.5 * (cuts[:-1] + cuts[1:])
    gap = np.abs(_quantile_steps(p, mids) - _quantile_steps(q, mids))
    return float(np.sum(widths * gap**order) ** (1.0 / order))


def cramer_distance(p: CategoricalDist, q: CategoricalDist) -> float:
    """l2 distance between CDFs, integrated exactly over the union of atoms."""
    z = np.union1d(p.atoms, q.atoms)
    diff = p.cdf(z) - q.cdf(z)
    return float(np.sqrt(np.sum(diff[:-1] ** 2 * np.diff(z))))


def project_probs(atoms, probs, grid) -> np.ndarray:
    """Project masses at arbitrary ``atoms`` onto a uniform ``grid``.

    Works on batches: ``atoms`` and ``probs`` share a shape ``(..., K)``
    and the result has shape ``(..., len(grid))``.  Each mass is split
    linearly between its two neighbouring grid atoms; mass outside the
    grid goes to the nearest boundary atom.
    """
    grid = np.asarray(grid, dtype=float)
    atoms = np.asarray(atoms, dtype=float)
    probs = np.asarray(probs, dtype=float)
    atoms, probs = np.broadcast_arrays(atoms, probs)
    n = grid.size
    lead = probs.shape[:-1]
    if n == 1:
        return probs.sum(axis=-1, keepdims=True)
    delta = (grid[-1] - grid[0]) / (n - 1)
    b = (np.clip(atoms, grid[0], grid[-1]) - grid[0]) / delta
    nearest = np.rint(b)
    b = np.where(np.abs(b - nearest) < _SNAP_TOL, nearest, b)
    lower = np.minimum(np.floor(b), n - 2).astype(np.int64)
    upper_w = b - lower
    rows = np.arange(int(np.prod(lead, dtype=np.int64))).reshape(lead + (1,)) * n
    out = np.zeros(int(np.prod(lead, dtype=np.int64)) * n)
    np.add.at(out, (rows + lower).ravel(), (probs * (1.0 - upper_w)).ravel())
    np.add.at(out, (rows + lower + 1).ravel(), (probs * upper_w).ravel())
    return out.reshape(lead + (n,))


def _is_uniform(grid: np.ndarray) -> bool:
    if grid.size < 3:
        return True
    steps = np.diff(grid)
    return bool(np.allclose(steps, steps[0], rtol=1e-9, atol=0.0))


def project_categorical(src: CategoricalDist, target_atoms) -> CategoricalDist:
    grid = np.asarray(target_atoms, dtype=float)
    if np.any(np.diff(grid) <= 0) or not _is_uniform(grid):
        raise ValueError("target atoms must be ascending and uniformly spaced")
    probs = project_probs(src.atoms, src.probs, grid)
    # splitting can leave -0.0 or 1e-17 residue, keep masses a valid simplex point
    probs = np.maximum(probs, 0.0)
    return CategoricalDist(grid, probs / probs.sum())


def _nearest_index(atoms: np.ndarray, x: float) -> int:
    i = int(np.searchsorted(atoms, x, side="left"))
    if i == 0:
        return 0
    if i == atoms.size:
        return atoms.size - 1
    # tie goes to the lower atom
    return i - 1 if x - atoms[i - 1] <= atoms[i] - x else i


def expectation_bin(d: CategoricalDist) -> int:
    """Index of the atom nearest to the expectation (ties to the lower index)."""
    return _nearest_index(d.atoms, expectation(d))


def decompose_exact(p: CategoricalDist, epsilon: float) -> Decomposition:
    """Solve p = (1 - eps) * delta_m + eps * mu for mu.

    When some raw remainder mass comes out negative the negatives are
    clipped to zero, the rest renormalized, and ``clipped`` is set.
    """
    if not 0.0 < epsilon < 1.0:
        raise EpsilonOutOfRange(f"epsilon must lie in (0, 1), got {epsilon!r}")
    m = expectation_bin(p)
    raw = p.probs.copy()
    raw[m] -= 1.0 - epsilon
    raw /= epsilon
    clipped = bool(np.any(raw < 0.0))
    if clipped:
        raw = np.maximum(raw, 0.0)
    total = raw.sum()
    if not clipped and abs(total - 1.0) > PROB_TOL:
        clipped = True
    mu = CategoricalDist(p.atoms, raw / total)
    return Decomposition(float(epsilon), expectation(p), mu, m, clipped)


def mix_with_dirac(p: CategoricalDist, epsilon: float) -> CategoricalDist:
    """(1 - eps) * delta_m + eps * p, with m the expectation bin of p."""
    if not 0.0 <= epsilon <= 1.0:
        raise EpsilonOutOfRange(f"epsilon must lie in [0, 1], got {epsilon!r}")
    m = expectation_bin(p)
    probs = epsilon * p.probs
    probs[m] += 1.0 - epsilon
    return CategoricalDist(p.atoms, probs)


def quantile_expectation(d: QuantileDist) -> float:
    """Mean of a quantile representation, weighting each value by the
    width of its fraction interval (tau_i - tau_{i-1}, tau_0 = 0).

    If the fractions stop short of 1 the weights are renormalized.
    """
    w = np.diff(d.fractions, prepend=0.0)
    return float(np.dot(w, d.values) / w.sum())


def to_text(d: CategoricalDist) -> str:
    fmt = lambda xs: " ".join(format(float(x), ".17g") for x in xs)
    return f"atoms: {fmt(d.atoms)}\nprobs: {fmt(d.probs)}\n"


def from_text(text: str) -> CategoricalDist:
    fields = {}
    for line in text.strip().splitlines():
        key, _, rest = line.partition(":")
        fields[key.strip()] = [float(v) for v in rest.split()]
    try:
        return CategoricalDist(fields["atoms"], fields["probs"])
    except KeyError as exc:
        raise ValueError(f"missing field {exc.args[0]!r}") from None
