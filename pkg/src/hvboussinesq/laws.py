"""Scalar nonsmooth boundary laws, their Clarke gradients and mollifications.

A law is described by the a.e. derivative ``j'`` of a locally Lipschitz
potential ``j``: smooth pieces between sorted breakpoints.  On a 2D boundary
the tangential velocity is the scalar ``s = u . tau``, so the friction
potential is scalar as well.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import polynomial as npoly

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class Piece:
    """One smooth branch of j'.  ``poly``: sum c_k s^k; ``exp``: a + b exp(-c s).

    ``reflect`` evaluates the odd mirror image s -> -f(-s).
    """

    kind: str
    params: tuple
    reflect: bool = False

    def __post_init__(self):
        if self.kind not in ("poly", "exp"):
            raise ValueError(f"unknown piece kind {self.kind!r}")
        if self.kind == "exp" and len(self.params) != 3:
            raise ValueError("exp piece needs (a, b, c)")
        if self.kind == "poly" and len(self.params) == 0:
            raise ValueError("poly piece needs at least one coefficient")

    def _raw(self, s):
        if self.kind == "poly":
            return npoly.polyval(s, self.params)
        a, b, c = self.params
        return a + b * np.exp(-c * s)

    def _raw_slope(self, s):
        if self.kind == "poly":
            d = npoly.polyder(self.params) if len(self.params) > 1 else [0.0]
            return npoly.polyval(s, d) + 0.0 * s
        a, b, c = self.params
        return -b * c * np.exp(-c * s)

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        return -self._raw(-s) if self.reflect else self._raw(s)

    def slope(self, s):
        s = np.asarray(s, dtype=float)
        return self._raw_slope(-s) if self.reflect else self._raw_slope(s)

    def mirrored(self) -> "Piece":
        return Piece(self.kind, self.params, not self.reflect)

    def to_json(self) -> dict:
        if self.kind == "poly":
            return {"kind": "poly", "coeffs": list(self.params)}
        a, b, c = self.params
        return {"kind": "exp", "a": a, "b": b, "c": c}


@dataclass(frozen=True, eq=False)
class PiecewiseLaw:
    """Piecewise-smooth derivative j' on the whole line.

    ``pieces[k]`` is active on ``(breakpoints[k-1], breakpoints[k])``.
    """

    breakpoints: tuple
    pieces: tuple
    name: str = "law"
    declared: dict = field(default_factory=dict)
    spec: dict = field(default_factory=dict)

    def __post_init__(self):
        bps = tuple(float(b) for b in self.breakpoints)
        if any(b2 <= b1 for b1, b2 in zip(bps, bps[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        if len(self.pieces) != len(bps) + 1:
            raise ValueError("need exactly one more piece than breakpoints")
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "_bps", np.array(bps))

    single_valued = False

    @classmethod
    def from_half_line(cls, breakpoints, pieces, name="law", declared=None, spec=None):
        """Even potential from its derivative on [0, inf); j' is extended oddly."""
        bps = [float(b) for b in breakpoints]
        if any(b <= 0 for b in bps):
            raise ValueError("half-line breakpoints must be positive")
        pieces = list(pieces)
        full_bps = [-b for b in reversed(bps)] + [0.0] + bps
        full_pieces = [p.mirrored() for p in reversed(pieces)] + pieces
        return cls(tuple(full_bps), tuple(full_pieces), name, dict(declared or {}), dict(spec or {}))

    def piece_index(self, s):
        return np.searchsorted(self._bps, s, side="right")

    def derivative(self, s):
        """a.e. derivative j'(s) (right branch at breakpoints)."""
        s = np.asarray(s, dtype=float)
        idx = self.piece_index(s)
        out = np.zeros_like(s)
        for k, piece in enumerate(self.pieces):
            mask = idx == k
            if np.any(mask):
                out[mask] = piece(s[mask])
        return out

    def one_sided(self, k: int) -> tuple[float, float]:
        """(left, right) limits of j' at breakpoint ``k``."""
        b = self.breakpoints[k]
        return float(self.pieces[k](b)), float(self.pieces[k + 1](b))

    def is_zero(self) -> bool:
        return all(p.kind == "poly" and not np.any(p.params) for p in self.pieces)


@dataclass(frozen=True)
class LawConstants:
    growth: float             # c0 (friction) or c1 (heat flux)
    m1: float                 # relaxed-monotonicity constant, inf for descending jumps
    certified_range: float
    grid: int
    notes: tuple = ()

    @property
    def c0(self) -> float:
        return self.growth

    @property
    def c1(self) -> float:
        return self.growth


def eval_clarke(law: PiecewiseLaw, s: float, atol: float = 1e-14) -> tuple[float, float]:
    """Clarke gradient of a scalar piecewise-C1 potential as an interval [lo, hi]."""
    s = float(s)
    for k, b in enumerate(law.breakpoints):
        if abs(s - b) <= atol:
            left, right = law.one_sided(k)
            return min(left, right), max(left, right)
    v = float(law.derivative(s))
    return v, v


def clarke_bounds(law: PiecewiseLaw, s: np.ndarray, atol: float = 1e-14):
    """Vectorized :func:`eval_clarke`."""
    s = np.asarray(s, dtype=float)
    lo = law.derivative(s)
    hi = lo.copy()
    for k, b in enumerate(law.breakpoints):
        at = np.abs(s - b) <= atol
        if np.any(at):
            left, right = law.one_sided(k)
            lo[at], hi[at] = min(left, right), max(left, right)
    return lo, hi


# --- mollification ---------------------------------------------------------

def _bump(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - t[inside] ** 2))
    return out


@lru_cache(maxsize=None)
def bump_normalization() -> float:
    """Z = int_{-1}^{1} exp(-1 / (1 - x^2)) dx."""
    x, w = np.polynomial.legendre.leggauss(200)
    return float(np.sum(w * np.exp(-1.0 / (1.0 - x * x))))


@lru_cache(maxsize=8)
def _gauss(n: int):
    return np.polynomial.legendre.leggauss(n)


def mollifier(t):
    """Standard bump rho, normalized to unit mass and supported in [-1, 1]."""
    return _bump(t) / bump_normalization()


@dataclass(frozen=True, eq=False)
class MollifiedLaw:
    """Dj_m(s) = int rho_m(z) j'(s - z) dz with rho_m(z) = m rho(m z)."""

    base: PiecewiseLaw
    m: int
    n_gauss: int = 64

    single_valued = True

    def __post_init__(self):
        if self.m < 1:
            raise ValueError(f"mollification level must be >= 1, got {self.m}")

    @property
    def radius(self) -> float:
        return 1.0 / self.m

    def derivative(self, s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        shape = s.shape
        s = s.ravel()
        law = self.base
        if law.is_zero():
            return np.zeros(shape)
        g, wg = _gauss(self.n_gauss)
        bps = law._bps
        m = float(self.m)
        # split t in [-1, 1] where s - t/m crosses a breakpoint
        tb = np.clip(m * (s[:, None] - bps[None, :]), -1.0, 1.0)
        splits = np.sort(
            np.concatenate([-np.ones((len(s), 1)), tb, np.ones((len(s), 1))], axis=1), axis=1
        )
        lo, hi = splits[:, :-1], splits[:, 1:]
        # most sub-intervals are empty; integrate only the live ones
        keep = hi > lo
        row = np.nonzero(keep)[0]
        lo, hi = lo[keep], hi[keep]
        half = 0.5 * (hi - lo)
        t = lo[:, None] + half[:, None] * (g + 1.0)
        w = half[:, None] * wg
        y = s[row, None] - t / m
        idx = np.searchsorted(bps, s[row] - 0.5 * (lo + hi) / m, side="right")
        vals = np.empty_like(y)
        for k, piece in enumerate(law.pieces):
            mask = idx == k
            if np.any(mask):
                vals[mask] = piece(y[mask])
        part = np.sum(w * mollifier(t) * vals, axis=1)
        out = np.bincount(row, weights=part, minlength=len(s))
        return out.reshape(shape)

    def mass(self, s: float = 0.0) -> float:
        """int rho_m with the same split rule used by :meth:`derivative`."""
        one = PiecewiseLaw(self.base.breakpoints,
                           tuple(Piece("poly", (1.0,)) for _ in self.base.pieces))
        return float(MollifiedLaw(one, self.m, self.n_gauss).derivative(np.array([s]))[0])


def mollify(law: PiecewiseLaw, m: int, n_gauss: int = 64) -> MollifiedLaw:
    return MollifiedLaw(law, int(m), n_gauss)


# --- constants --------------------------------------------------------------

def estimate_constants(law: PiecewiseLaw, R: float, n: int = 2001) -> LawConstants:
    """Growth constant and relaxed-monotonicity constant certified on [-R, R].

    m1 is the largest descent slope of the smooth pieces; a downward jump in
    j' makes m1 infinite unless the law declares a bounded-descent value.
    """
    if not R > 0:
        raise ValueError("range R must be positive")
    if n < 100:
        raise ValueError("grid needs at least 100 points")
    bps = [b for b in law.breakpoints if -R <= b <= R]
    grid = np.union1d(np.linspace(-R, R, n), bps)
    lo, hi = clarke_bounds(law, grid)
    growth = float(np.max(np.maximum(np.abs(lo), np.abs(hi)) / (1.0 + np.abs(grid))))

    notes = []
    m1 = 0.0
    edges = [-math.inf] + list(law.breakpoints) + [math.inf]
    for k, piece in enumerate(law.pieces):
        a, b = max(edges[k], -R), min(edges[k + 1], R)
        if a >= b:
            continue
        pts = np.concatenate([[a, b], grid[(grid > a) & (grid < b)]])
        m1 = max(m1, float(np.max(-piece.slope(pts))))
    jumps = []
    for k, b in enumerate(law.breakpoints):
        if -R <= b <= R:
            left, right = law.one_sided(k)
            if right < left - 1e-14 * max(1.0, abs(left)):
                jumps.append(b)
    if jumps:
        if "m1" in law.declared:
            m1 = max(m1, float(law.declared["m1"]))
            notes.append(f"descending jump(s) at {jumps}; declared m1 used")
        else:
            m1 = math.inf
            notes.append(f"descending jump(s) at {jumps}: relaxed monotonicity fails (m1 = inf)")
    if "c0" in law.declared or "c1" in law.declared:
        notes.append("declared growth constant ignored; estimated value reported")
    notes.append(f"constants certified on [-{R}, {R}] only")
    return LawConstants(growth, max(m1, 0.0), float(R), int(n), tuple(notes))


# --- conductivity and buoyancy ----------------------------------------------

@dataclass(frozen=True)
class ConductivitySpec:
    """Bounded Lipschitz conductivity k(r) with lower bound delta.

    kinds: ``constant`` (value), ``sine`` (a + b sin(c r)),
    ``clipped_poly`` (polynomial clipped to [lo, hi]).
    """

    kind: str
    params: dict
    delta: float

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        p = self.params
        if self.kind == "constant":
            return np.full_like(r, p["value"])
        if self.kind == "sine":
            return p["a"] + p["b"] * np.sin(p["c"] * r)
        if self.kind == "clipped_poly":
            return np.clip(npoly.polyval(r, p["coeffs"]), p["lo"], p["hi"])
        raise ValueError(f"unknown conductivity kind {self.kind!r}")

    @property
    def upper(self) -> float:
        p = self.params
        if self.kind == "constant":
            return float(p["value"])
        if self.kind == "sine":
            return float(p["a"] + abs(p["b"]))
        return float(p["hi"])

    def lipschitz(self, R: float = 100.0, n: int = 20001) -> float:
        p = self.params
        if self.kind == "constant":
            return 0.0
        if self.kind == "sine":
            return float(abs(p["b"] * p["c"]))
        r = np.linspace(-R, R, n)
        return float(np.max(np.abs(np.diff(self(r)) / np.diff(r))))

    def verify(self, R: float = 100.0, n: int = 20001) -> list[str]:
        """Sampled check of H(k); returns violations."""
        problems = []
        if not self.delta > 0:
            problems.append(f"H(k) requires k(r) > delta > 0, got delta = {self.delta}")
        k = self(np.linspace(-R, R, n))
        if np.min(k) < self.delta:
            problems.append(f"H(k): sampled min k = {np.min(k):.6g} below delta = {self.delta}")
        if not np.all(np.isfinite(k)):
            problems.append("H(k): k not finite")
        return problems


def conductivity(kind: str = "constant", delta: float | None = None, **params) -> ConductivitySpec:
    lower = {
        "constant": lambda p: p["value"],
        "sine": lambda p: p["a"] - abs(p["b"]),
        "clipped_poly": lambda p: p["lo"],
    }
    if kind not in lower:
        raise ValueError(f"unknown conductivity kind {kind!r}")
    if kind == "clipped_poly":
        params["coeffs"] = tuple(params["coeffs"])
    d = float(lower[kind](params)) if delta is None else float(delta)
    return ConductivitySpec(kind, params, d)


@dataclass(frozen=True)
class BuoyancySpec:
    """Linear buoyancy F(theta) = beta * theta * e."""

    e: tuple
    beta: float

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        return self.beta * theta[..., None] * np.asarray(self.e, dtype=float)

    @property
    def norm(self) -> float:
        return abs(self.beta) * float(np.hypot(*self.e))


# --- smallness condition ----------------------------------------------------

@dataclass(frozen=True)
class H0Report:
    velocity_ok: bool
    velocity_margin: float
    velocity_threshold: float
    temperature_ok: bool
    temperature_margin: float
    temperature_threshold: float
    discrete_velocity_margin: float
    discrete_temperature_margin: float
    notes: tuple = ()

    @property
    def passed(self) -> bool:
        return self.velocity_ok and self.temperature_ok

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["notes"] = list(self.notes)
        d["passed"] = self.passed
        return d


def check_H0(constants_j: LawConstants, constants_j1: LawConstants, alpha: float,
             k, norms) -> H0Report:
    """alpha > max(2 sqrt2 c0, m1) |gamma_s|^2 and delta > 2 sqrt2 c1 |gamma|^2 (strict)."""
    delta = float(k.delta) if hasattr(k, "delta") else float(k)
    gs2 = norms.gamma_s_norm ** 2
    g2 = norms.gamma_norm ** 2
    c0, m1, c1 = constants_j.growth, constants_j.m1, constants_j1.growth
    vel_factor = max(2.0 * SQRT2 * c0, m1)
    vel_thr = vel_factor * gs2 if gs2 > 0 else 0.0
    tem_thr = 2.0 * SQRT2 * c1 * g2 if g2 > 0 else 0.0
    notes = ["the constant 'm' in the smallness condition is read as m1"]
    if math.isinf(vel_thr):
        notes.append("friction law has unbounded descent (m1 = inf)")
    return H0Report(
        velocity_ok=bool(alpha > vel_thr),
        velocity_margin=alpha - vel_thr,
        velocity_threshold=vel_thr,
        temperature_ok=bool(delta > tem_thr),
        temperature_margin=delta - tem_thr,
        temperature_threshold=tem_thr,
        discrete_velocity_margin=alpha / 2.0 - c0 * gs2,
        discrete_temperature_margin=delta / 2.0 - c1 * g2,
        notes=tuple(notes),
    )


# --- catalog and JSON --------------------------------------------------------

def zero_law() -> PiecewiseLaw:
    return PiecewiseLaw((), (Piece("poly", (0.0,)),), "zero", spec={"preset": "zero"})


def abs_law(scale: float = 1.0) -> PiecewiseLaw:
    return PiecewiseLaw.from_half_line((), [Piece("poly", (scale,))], "abs",
                                       spec={"preset": "abs", "scale": scale})


def quadratic_law(scale: float = 1.0) -> PiecewiseLaw:
    return PiecewiseLaw((), (Piece("poly", (0.0, scale)),), "quadratic",
                        spec={"preset": "quadratic", "scale": scale})


def stick_slip_law(mu_s: float, mu_k: float, s0: float, width: float = 0.0) -> PiecewiseLaw:
    """Static level mu_s up to s0, then a drop to mu_k (a jump, or linear over ``width``)."""
    if not (mu_s >= mu_k >= 0 and s0 > 0 and width >= 0):
        raise ValueError("stick-slip needs mu_s >= mu_k >= 0, s0 > 0, width >= 0")
    spec = {"preset": "stick_slip", "mu_s": mu_s, "mu_k": mu_k, "s0": s0, "width": width}
    if width == 0.0:
        return PiecewiseLaw.from_half_line(
            (s0,), [Piece("poly", (mu_s,)), Piece("poly", (mu_k,))], "stick_slip", spec=spec)
    slope = (mu_k - mu_s) / width
    return PiecewiseLaw.from_half_line(
        (s0, s0 + width),
        [Piece("poly", (mu_s,)), Piece("poly", (mu_s - slope * s0, slope)), Piece("poly", (mu_k,))],
        "stick_slip", spec=spec)


def exp_slip_law(mu_s: float, mu_k: float, decay: float) -> PiecewiseLaw:
    """j'(s) = mu_k + (mu_s - mu_k) exp(-decay s) for s > 0, odd extension."""
    return PiecewiseLaw.from_half_line(
        (), [Piece("exp", (mu_k, mu_s - mu_k, decay))], "exp_slip",
        spec={"preset": "exp_slip", "mu_s": mu_s, "mu_k": mu_k, "decay": decay})


def nonmonotone_flux_law(kappa: float, r0: float, r1: float, drop: float = 0.5) -> PiecewiseLaw:
    """j1'(r) = kappa r up to r0, linear descent to (1 - drop) kappa r0 at r1, flat after."""
    if not (kappa >= 0 and 0 < r0 < r1 and 0 <= drop <= 1):
        raise ValueError("nonmonotone flux needs kappa >= 0, 0 < r0 < r1, 0 <= drop <= 1")
    top, low = kappa * r0, (1.0 - drop) * kappa * r0
    slope = (low - top) / (r1 - r0)
    return PiecewiseLaw.from_half_line(
        (r0, r1),
        [Piece("poly", (0.0, kappa)), Piece("poly", (top - slope * r0, slope)), Piece("poly", (low,))],
        "nonmonotone_flux",
        spec={"preset": "nonmonotone_flux", "kappa": kappa, "r0": r0, "r1": r1, "drop": drop})


PRESETS = {
    "zero": zero_law,
    "abs": abs_law,
    "quadratic": quadratic_law,
    "stick_slip": stick_slip_law,
    "exp_slip": exp_slip_law,
    "nonmonotone_flux": nonmonotone_flux_law,
}


def catalog() -> dict[str, PiecewiseLaw]:
    """Reference laws used by the test suite and the CLI."""
    return {
        "zero": zero_law(),
        "abs": abs_law(),
        "quadratic": quadratic_law(),
        "stick_slip_jump": stick_slip_law(0.3, 0.2, 0.05),
        "stick_slip": stick_slip_law(0.3, 0.2, 0.05, 0.1),
        "exp_slip": exp_slip_law(0.3, 0.2, 2.0),
        "nonmonotone_flux": nonmonotone_flux_law(0.4, 0.5, 1.0),
    }


def _parse_piece(d: dict) -> Piece:
    kind = d.get("kind")
    if kind == "poly":
        return Piece("poly", tuple(float(c) for c in d["coeffs"]))
    if kind == "exp":
        return Piece("exp", (float(d["a"]), float(d["b"]), float(d["c"])))
    raise ValueError(f"unknown piece kind {kind!r}")


def law_from_json(d: dict) -> PiecewiseLaw:
    """Build a law from its JSON description (preset or explicit pieces)."""
    d = dict(d)
    if "preset" in d:
        name = d.pop("preset")
        if name not in PRESETS:
            raise ValueError(f"unknown law preset {name!r}; choose from {sorted(PRESETS)}")
        declared = d.pop("declared", None)
        law = PRESETS[name](**d)
        if declared:
            object.__setattr__(law, "declared", dict(declared))
        return law
    allowed = {"breakpoints", "pieces", "symmetric", "declared", "name"}
    unknown = set(d) - allowed
    if unknown:
        raise ValueError(f"unknown law keys {sorted(unknown)}")
    pieces = [_parse_piece(p) for p in d["pieces"]]
    bps = d.get("breakpoints", [])
    name = d.get("name", "custom")
    declared = d.get("declared", {})
    spec = {k: d[k] for k in d}
    if d.get("symmetric", False):
        return PiecewiseLaw.from_half_line(bps, pieces, name, declared, spec)
    return PiecewiseLaw(tuple(bps), tuple(pieces), name, dict(declared), spec)
