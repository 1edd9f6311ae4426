"""Constitutive laws for the two-phase model and their admissibility checks.

A :class:`MaterialLaws` bundle collects the mobility ``m``, the double-well
potential ``F`` with derivatives, the entropy diffusivity ``lam = m * F''``,
its primitive ``B`` (so that ``div(lam grad phi) = Lap B(phi)``), the entropy
function ``M`` with ``m * M'' = 1``, and the order-parameter dependent
viscosity ``nu``.  All callables are vectorised over numpy arrays.

The degenerate/logarithmic built-in pair is

``m(s) = 1 - s^2``,
``F(s) = (1 + s) ln(1 + s) + (1 - s) ln(1 - s)``,

for which everything downstream simplifies analytically: ``F''(s) =
2 / (1 - s^2)``, so ``lam = 2`` identically, ``B(s) = 2 s``, ``M'(s) =
artanh(s)`` and ``M(s) = s artanh(s) + ln(1 - s^2) / 2`` with finite limits
``F(+-1) = 2 ln 2`` and ``M(+-1) = ln 2``.

Derivatives of the potential blow up at ``s = +-1``; quadrature and
diagnostics evaluate them through :func:`eval_clamped`, which pulls the
argument a distance ``singular_clamp`` inside the open interval.  The bounded
laws (mobility, diffusivity, ``B``, viscosity) are never treated as singular:
they extend continuously to the closed interval and are clamped to it only to
guard against out-of-range states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import xlogy

from .geometry import ScalarField

Law = Callable[[np.ndarray], np.ndarray]

# Laws whose values/derivatives are unbounded near s = +-1: evaluation snaps
# into the open interval by singular_clamp.
_SINGULAR_SELECTORS = {
    "potential_d1",
    "potential_d2",
    "potential_d3",
    "entropy",
    "entropy_d1",
}
# Laws bounded on the closed interval: clamp to [-1, 1] only.
_REGULAR_SELECTORS = {
    "mobility",
    "mobility_d1",
    "mobility_d2",
    "potential",
    "diffusivity",
    "diffusivity_d1",
    "diffusivity_d2",
    "kirchhoff",
    "viscosity",
    "viscosity_d1",
    "viscosity_d2",
}


@dataclass
class MaterialLaws:
    """Bundle of constitutive laws with declared lower bounds."""

    name: str
    mobility: Law
    mobility_d1: Law
    mobility_d2: Law
    potential_d2: Law
    potential_d3: Law
    diffusivity: Law
    diffusivity_d1: Law
    diffusivity_d2: Law
    kirchhoff: Law
    viscosity: Law
    viscosity_d1: Law
    viscosity_d2: Law
    diffusivity_min: float
    convexity_min: float
    viscosity_min: float
    potential: Optional[Law] = None
    potential_d1: Optional[Law] = None
    entropy: Optional[Law] = None
    entropy_d1: Optional[Law] = None
    singular_clamp: float = 1e-9
    hypothesis_clean: bool = True

    def __post_init__(self) -> None:
        if not (0.0 < self.singular_clamp < 1e-2):
            raise ValueError(f"singular_clamp {self.singular_clamp} outside (0, 1e-2)")
        if self.diffusivity_min <= 0.0 or self.viscosity_min <= 0.0:
            raise ValueError("declared lower bounds for diffusivity and viscosity must be positive")


def eval_clamped(laws: MaterialLaws, selector: str, s) -> np.ndarray:
    """Evaluate one law with the clamping rule appropriate to its class.

    Singular selectors (potential derivatives, entropy) are evaluated at
    ``clip(s, -1 + delta, 1 - delta)`` with ``delta = laws.singular_clamp``;
    bounded selectors at ``clip(s, -1, 1)``.  Unknown selectors and laws the
    bundle does not provide raise ``ValueError``.
    """
    s = np.asarray(s, dtype=float)
    if selector in _SINGULAR_SELECTORS:
        lo = -1.0 + laws.singular_clamp
        hi = 1.0 - laws.singular_clamp
    elif selector in _REGULAR_SELECTORS:
        lo, hi = -1.0, 1.0
    else:
        valid = sorted(_SINGULAR_SELECTORS | _REGULAR_SELECTORS)
        raise ValueError(f"unknown law selector {selector!r}; valid: {valid}")
    fn = getattr(laws, selector, None)
    if fn is None:
        raise ValueError(f"law bundle {laws.name!r} does not provide {selector!r}")
    return np.asarray(fn(np.clip(s, lo, hi)), dtype=float)


# ---------------------------------------------------------------------------
# built-in bundles
# ---------------------------------------------------------------------------


def log_degenerate(nu0: float = 1.0, nu_slope: float = 0.25) -> MaterialLaws:
    """Degenerate mobility with the logarithmic double-well potential.

    The viscosity interpolates linearly between the phases,
    ``nu(s) = nu0 (1 + nu_slope s)``; ``|nu_slope| < 1`` keeps it positive.
    """
    if not abs(nu_slope) < 1.0:
        raise ValueError(f"|nu_slope| must be < 1, got {nu_slope}")
    if nu0 <= 0.0:
        raise ValueError(f"nu0 must be positive, got {nu0}")

    ln2 = math.log(2.0)

    def potential(s):
        s = np.asarray(s, dtype=float)
        # xlogy continues x ln x by 0 at x = 0, giving F(+-1) = 2 ln 2 exactly.
        return xlogy(1.0 + s, 1.0 + s) + xlogy(1.0 - s, 1.0 - s)

    def entropy(s):
        s = np.asarray(s, dtype=float)
        inner = np.clip(s, -1.0 + 1e-300, 1.0 - 1e-300)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = inner * np.arctanh(inner) + 0.5 * np.log1p(-inner * inner)
        return np.where(np.abs(s) >= 1.0, ln2, val)

    return MaterialLaws(
        name="log-degenerate",
        mobility=lambda s: 1.0 - np.asarray(s, float) ** 2,
        mobility_d1=lambda s: -2.0 * np.asarray(s, float),
        mobility_d2=lambda s: np.full_like(np.asarray(s, float), -2.0),
        potential=potential,
        potential_d1=lambda s: np.log1p(np.asarray(s, float)) - np.log1p(-np.asarray(s, float)),
        potential_d2=lambda s: 2.0 / (1.0 - np.asarray(s, float) ** 2),
        potential_d3=lambda s: 4.0 * np.asarray(s, float) / (1.0 - np.asarray(s, float) ** 2) ** 2,
        diffusivity=lambda s: np.full_like(np.asarray(s, float), 2.0),
        diffusivity_d1=lambda s: np.zeros_like(np.asarray(s, float)),
        diffusivity_d2=lambda s: np.zeros_like(np.asarray(s, float)),
        kirchhoff=lambda s: 2.0 * np.asarray(s, float),
        entropy=entropy,
        entropy_d1=lambda s: np.arctanh(np.asarray(s, float)),
        viscosity=lambda s: nu0 * (1.0 + nu_slope * np.asarray(s, float)),
        viscosity_d1=lambda s: np.full_like(np.asarray(s, float), nu0 * nu_slope),
        viscosity_d2=lambda s: np.zeros_like(np.asarray(s, float)),
        diffusivity_min=2.0,
        convexity_min=2.0,
        viscosity_min=nu0 * (1.0 - abs(nu_slope)),
    )


def constant_mobility_quartic(
    curvature_shift: float = 2.0, nu0: float = 1.0, nu_slope: float = 0.25
) -> MaterialLaws:
    """Constant mobility with a shifted quartic potential (regression baseline).

    ``m = 1`` does not degenerate at the pure phases, so this bundle violates
    the degeneracy hypothesis on purpose; validation flags it and the solver
    only accepts it when explicitly overridden.
    """
    if not abs(nu_slope) < 1.0:
        raise ValueError(f"|nu_slope| must be < 1, got {nu_slope}")
    c = float(curvature_shift)
    if c <= 1.0:
        raise ValueError(f"curvature_shift must exceed 1 for a positive diffusivity, got {c}")

    return MaterialLaws(
        name="constant-mobility-quartic",
        mobility=lambda s: np.ones_like(np.asarray(s, float)),
        mobility_d1=lambda s: np.zeros_like(np.asarray(s, float)),
        mobility_d2=lambda s: np.zeros_like(np.asarray(s, float)),
        potential=lambda s: (np.asarray(s, float) ** 2 - 1.0) ** 2 / 4.0
        + c * np.asarray(s, float) ** 2 / 2.0,
        potential_d1=lambda s: np.asarray(s, float) ** 3 + (c - 1.0) * np.asarray(s, float),
        potential_d2=lambda s: 3.0 * np.asarray(s, float) ** 2 + (c - 1.0),
        potential_d3=lambda s: 6.0 * np.asarray(s, float),
        diffusivity=lambda s: 3.0 * np.asarray(s, float) ** 2 + (c - 1.0),
        diffusivity_d1=lambda s: 6.0 * np.asarray(s, float),
        diffusivity_d2=lambda s: np.full_like(np.asarray(s, float), 6.0),
        kirchhoff=lambda s: np.asarray(s, float) ** 3 + (c - 1.0) * np.asarray(s, float),
        entropy=lambda s: np.asarray(s, float) ** 2 / 2.0,
        entropy_d1=lambda s: np.asarray(s, float),
        viscosity=lambda s: nu0 * (1.0 + nu_slope * np.asarray(s, float)),
        viscosity_d1=lambda s: np.full_like(np.asarray(s, float), nu0 * nu_slope),
        viscosity_d2=lambda s: np.zeros_like(np.asarray(s, float)),
        diffusivity_min=c - 1.0,
        convexity_min=c - 1.0,
        viscosity_min=nu0 * (1.0 - abs(nu_slope)),
        hypothesis_clean=False,
    )


_BUILTIN_LAWS = {
    "log-degenerate": log_degenerate,
    "constant-mobility-quartic": constant_mobility_quartic,
}


def get_laws(name: str, **overrides) -> MaterialLaws:
    """Look up a built-in law bundle by name."""
    try:
        factory = _BUILTIN_LAWS[name]
    except KeyError:
        raise ValueError(
            f"unknown material law {name!r}; valid: {sorted(_BUILTIN_LAWS)}"
        ) from None
    return factory(**overrides)


# ---------------------------------------------------------------------------
# hypothesis validation
# ---------------------------------------------------------------------------


@dataclass
class HypothesisCheck:
    name: str
    passed: bool
    detail: str
    worst_value: float = float("nan")
    worst_point: float = float("nan")

    def __str__(self) -> str:
        tag = "ok " if self.passed else "FAIL"
        return f"[{tag}] {self.name}: {self.detail}"


@dataclass
class ValidationReport:
    law_name: str
    checks: list[HypothesisCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed_checks(self) -> list[HypothesisCheck]:
        return [c for c in self.checks if not c.passed]

    def __str__(self) -> str:
        head = f"validation of {self.law_name!r}: {'PASS' if self.passed else 'FAIL'}"
        return "\n".join([head] + [f"  {c}" for c in self.checks])


def _fd2(fn: Law, s: np.ndarray, h: float) -> np.ndarray:
    return (np.asarray(fn(s + h)) - 2.0 * np.asarray(fn(s)) + np.asarray(fn(s - h))) / h**2


def _fd1(fn: Law, s: np.ndarray, h: float) -> np.ndarray:
    return (np.asarray(fn(s + h)) - np.asarray(fn(s - h))) / (2.0 * h)


def _worst(values: np.ndarray, points: np.ndarray) -> tuple[float, float]:
    k = int(np.argmax(values))
    return float(values[k]), float(points[k])


def validate(laws: MaterialLaws, tail_width: float = 0.1, samples: int = 2001) -> ValidationReport:
    """Sampled checks of the structural hypotheses; never raises.

    ``tail_width`` is the width of the monotonicity windows adjoining the
    pure phases.  Checks run on uniform samples of the closed interval (the
    singular clamp pulls potential-derivative samples inside).
    """
    rep = ValidationReport(laws.name)
    delta = laws.singular_clamp
    s_closed = np.linspace(-1.0, 1.0, samples)
    s_open = np.clip(s_closed, -1.0 + delta, 1.0 - delta)
    s_mid = np.linspace(-0.95, 0.95, samples)

    def add(name: str, passed: bool, detail: str, worst=(float("nan"), float("nan"))):
        rep.checks.append(HypothesisCheck(name, bool(passed), detail, worst[0], worst[1]))

    # degeneracy: m >= 0, m(+-1) = 0, m > 0 inside
    m = np.asarray(laws.mobility(s_closed), dtype=float)
    m_end = max(abs(float(m[0])), abs(float(m[-1])))
    m_min = float(m.min())
    interior = np.abs(s_closed) <= 1.0 - tail_width
    m_int_min = float(m[interior].min())
    add(
        "mobility-degenerate",
        (m_min >= -1e-12) and (m_end <= 1e-10) and (m_int_min > 0.0),
        f"min m = {m_min:.3e}, m(+-1) = {m_end:.3e}, interior min = {m_int_min:.3e}",
        (m_end, 1.0),
    )

    # monotone mobility tails
    tail = s_closed >= 1.0 - tail_width
    dm_hi = np.diff(m[tail])
    tail_lo = s_closed <= -1.0 + tail_width
    dm_lo = np.diff(m[tail_lo])
    add(
        "mobility-tails-monotone",
        bool((dm_hi <= 1e-12).all() and (dm_lo >= -1e-12).all()),
        f"max slope defect {max(float(dm_hi.max(initial=0.0)), float((-dm_lo).max(initial=0.0))):.3e}",
    )

    # derivative consistency of the provided mobility derivatives
    h = 1e-6
    d1_err = np.abs(np.asarray(laws.mobility_d1(s_mid)) - _fd1(laws.mobility, s_mid, h))
    scale = 1.0 + np.abs(np.asarray(laws.mobility_d1(s_mid)))
    add(
        "mobility-derivatives-consistent",
        bool((d1_err / scale < 1e-4).all()),
        f"max relative defect {float((d1_err / scale).max()):.3e}",
        _worst(d1_err / scale, s_mid),
    )

    # convexity floor of the potential
    fpp = np.asarray(laws.potential_d2(s_open), dtype=float)
    add(
        "potential-convexity",
        bool((fpp >= laws.convexity_min - 1e-9).all()),
        f"min F'' = {float(fpp.min()):.6g} against declared floor {laws.convexity_min:.6g}",
        _worst(-fpp, s_open),
    )

    # potential curvature grows toward the pure phases
    k_hi = s_open >= 1.0 - tail_width
    k_lo = s_open <= -1.0 + tail_width
    grow_hi = np.diff(fpp[k_hi])
    grow_lo = np.diff(fpp[k_lo])
    add(
        "potential-tails-monotone",
        bool((grow_hi >= -1e-9).all() and (grow_lo <= 1e-9).all()),
        "F'' nondecreasing toward +1 and nonincreasing toward -1 on the tails",
    )

    # diffusivity: lam = m F'' with a positive floor and consistent derivative
    lam = np.asarray(laws.diffusivity(s_open), dtype=float)
    prod = np.asarray(laws.mobility(s_open), dtype=float) * fpp
    lam_err = np.abs(prod - lam) / (1.0 + np.abs(lam))
    add(
        "diffusivity-product-identity",
        bool((lam_err < 1e-8).all()),
        f"max |m F'' - lam| (relative) = {float(lam_err.max()):.3e}",
        _worst(lam_err, s_open),
    )
    lam_closed = np.asarray(laws.diffusivity(s_closed), dtype=float)
    add(
        "diffusivity-floor",
        bool((lam_closed >= laws.diffusivity_min - 1e-12).all()),
        f"min lam = {float(lam_closed.min()):.6g} against declared floor {laws.diffusivity_min:.6g}",
        _worst(-lam_closed, s_closed),
    )
    dlam_err = np.abs(np.asarray(laws.diffusivity_d1(s_mid)) - _fd1(laws.diffusivity, s_mid, h))
    add(
        "diffusivity-derivative-consistent",
        bool((dlam_err / (1.0 + np.abs(lam.mean())) < 1e-4).all()),
        f"max defect {float(dlam_err.max()):.3e}",
    )

    # kirchhoff primitive: B' = lam
    bp = _fd1(laws.kirchhoff, s_mid, h)
    bp_err = np.abs(bp - np.asarray(laws.diffusivity(s_mid))) / (
        1.0 + np.abs(np.asarray(laws.diffusivity(s_mid)))
    )
    add(
        "kirchhoff-primitive",
        bool((bp_err < 1e-4).all()),
        f"max |B' - lam| (relative) = {float(bp_err.max()):.3e}",
        _worst(bp_err, s_mid),
    )

    # entropy: m M'' = 1 and normalisation M(0) = M'(0) = 0
    if laws.entropy is not None and laws.entropy_d1 is not None:
        mpp = _fd1(laws.entropy_d1, s_mid, h)
        ent_err = np.abs(np.asarray(laws.mobility(s_mid)) * mpp - 1.0)
        zero = abs(float(np.asarray(laws.entropy(np.array(0.0))))) + abs(
            float(np.asarray(laws.entropy_d1(np.array(0.0))))
        )
        add(
            "entropy-weighted-curvature",
            bool((ent_err < 1e-4).all() and zero < 1e-12),
            f"max |m M'' - 1| = {float(ent_err.max()):.3e}, |M(0)| + |M'(0)| = {zero:.3e}",
            _worst(ent_err, s_mid),
        )
    else:
        add("entropy-weighted-curvature", True, "entropy not provided; skipped")

    # viscosity: positive floor, bounded slope
    nu = np.asarray(laws.viscosity(s_closed), dtype=float)
    nup = np.asarray(laws.viscosity_d1(s_closed), dtype=float)
    add(
        "viscosity-floor",
        bool((nu >= laws.viscosity_min - 1e-12).all() and laws.viscosity_min > 0.0),
        f"min nu = {float(nu.min()):.6g} against declared floor {laws.viscosity_min:.6g}",
        _worst(-nu, s_closed),
    )
    add(
        "viscosity-lipschitz",
        bool(np.isfinite(nup).all()),
        f"max |nu'| = {float(np.abs(nup).max()):.6g}",
    )

    return rep


# ---------------------------------------------------------------------------
# diagnostics on states
# ---------------------------------------------------------------------------


def chemical_potential(phi: ScalarField, laws: MaterialLaws, dk) -> ScalarField:
    """Nonlocal chemical potential mu = F'(phi) - K * phi (diagnostic).

    The solver itself never evaluates F' (the step works with B and lam);
    this reconstruction is for reporting, so the singular clamp applies.
    """
    from . import kernels

    if laws.potential_d1 is None:
        raise ValueError(f"law bundle {laws.name!r} does not provide potential_d1")
    fp = eval_clamped(laws, "potential_d1", phi.data)
    conv = kernels.convolve(dk, phi)
    return ScalarField(phi.grid, fp - conv.data)


@dataclass
class AdmissibilityReport:
    admissible: bool
    max_abs: float
    free_energy: float
    entropy_total: float
    boundary_flux_residual: float
    messages: list[str] = field(default_factory=list)

    def __str__(self) -> str:
        tag = "admissible" if self.admissible else "NOT admissible"
        lines = [
            f"initial state {tag}: max|phi0| = {self.max_abs:.6g}, "
            f"free energy = {self.free_energy:.6g}, entropy = {self.entropy_total:.6g}, "
            f"wall flux residual = {self.boundary_flux_residual:.3e}"
        ]
        lines += [f"  note: {m}" for m in self.messages]
        return "\n".join(lines)


def initial_admissibility(phi0: ScalarField, laws: MaterialLaws, dk) -> AdmissibilityReport:
    """Check that an initial phase field is inside the physical bounds.

    Requires ``|phi0| <= 1`` everywhere and finite total potential and
    entropy (evaluated without clamping: pure-phase cells rely on the finite
    limits the law provides, e.g. ``F(+-1) = 2 ln 2`` for the built-in pair).

    The natural wall condition couples the Kirchhoff flux with the nonlocal
    drift.  The Kirchhoff part vanishes identically under the zero-normal-
    difference closure, so the residual reported here is the remaining piece
    ``m(phi0) (grad K * phi0) . n`` sampled on the boundary faces; a large
    value is reported as a note, not a failure.
    """
    from . import kernels

    grid = phi0.grid
    messages: list[str] = []
    max_abs = float(np.abs(phi0.data).max())
    ok = True
    if max_abs > 1.0:
        ok = False
        messages.append(f"phase field leaves [-1, 1]: max |phi0| = {max_abs:.6g}")

    with np.errstate(divide="ignore", invalid="ignore"):
        fe = float("nan")
        if laws.potential is not None:
            fvals = np.asarray(laws.potential(np.clip(phi0.data, -1.0, 1.0)), dtype=float)
            fe = grid.cell_volume * float(fvals.sum()) if np.isfinite(fvals).all() else float("inf")
        ent = float("nan")
        if laws.entropy is not None:
            mvals = np.asarray(laws.entropy(np.clip(phi0.data, -1.0, 1.0)), dtype=float)
            ent = grid.cell_volume * float(mvals.sum()) if np.isfinite(mvals).all() else float("inf")
    if not math.isfinite(fe) and laws.potential is not None:
        ok = False
        messages.append("total potential energy is not finite")
    if not math.isfinite(ent) and laws.entropy is not None:
        ok = False
        messages.append("total entropy is not finite")

    gx, gy = kernels._gradconv_faces(dk, phi0.data)
    m_cells = eval_clamped(laws, "mobility", phi0.data)
    res = 0.0
    res = max(res, float(np.abs(m_cells[0, :] * gx[0, :]).max()))
    res = max(res, float(np.abs(m_cells[-1, :] * gx[-1, :]).max()))
    res = max(res, float(np.abs(m_cells[:, 0] * gy[:, 0]).max()))
    res = max(res, float(np.abs(m_cells[:, -1] * gy[:, -1]).max()))
    if res > 1e-6:
        messages.append(
            f"wall compatibility residual m (grad K * phi0) . n = {res:.3e}; "
            "the no-flux closure will hold it at zero discretely"
        )

    return AdmissibilityReport(ok, max_abs, fe, ent, res, messages)
