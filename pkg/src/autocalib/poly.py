"""Univariate real polynomials in the distortion parameter and their real roots.

Coefficients are stored in ascending power order. Every solver reduces its
constraints to one or a few of these low-degree polynomials, so the root
finders here trade generality for predictable accuracy: each returned root is
Newton-polished and checked against a relative residual bound.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from .errors import ZeroPolynomial

ROOT_DEDUP_TOL = 1e-10
RESIDUAL_TOL = 1e-9
# leading coefficients this small relative to the largest are treated as zero
_LEAD_TRIM = 1e-14
# eigenvalues closer than this (relative) are treated as one multiple root
_CLUSTER_TOL = 1e-5
_IMAG_TOL = 1e-6


class Poly:
    """Real polynomial with ascending coefficients, trailing zeros trimmed."""

    __slots__ = ("c",)

    def __init__(self, coeffs: Iterable[float] | float):
        c = np.atleast_1d(np.asarray(coeffs, dtype=float)).ravel()
        n = len(c)
        while n > 0 and c[n - 1] == 0.0:
            n -= 1
        self.c = c[:n].copy() if n else np.zeros(1)

    @classmethod
    def from_roots(cls, roots: Sequence[float], lead: float = 1.0) -> "Poly":
        p = cls([lead])
        for r in roots:
            p = p * cls([-r, 1.0])
        return p

    @property
    def degree(self) -> int:
        """Degree, or -1 for the zero polynomial."""
        return -1 if self.is_zero() else len(self.c) - 1

    def is_zero(self) -> bool:
        return len(self.c) == 1 and self.c[0] == 0.0

    def norm(self) -> float:
        """Max-abs coefficient norm."""
        return float(np.max(np.abs(self.c)))

    def __call__(self, x):
        if isinstance(x, (float, int)):
            return _horner(self.c, x)
        return np.polynomial.polynomial.polyval(x, self.c)

    def __add__(self, other):
        other = _as_poly(other)
        n = max(len(self.c), len(other.c))
        out = np.zeros(n)
        out[: len(self.c)] += self.c
        out[: len(other.c)] += other.c
        return Poly(out)

    __radd__ = __add__

    def __neg__(self):
        return Poly(-self.c)

    def __sub__(self, other):
        return self + (-_as_poly(other))

    def __rsub__(self, other):
        return _as_poly(other) - self

    def __mul__(self, other):
        if np.isscalar(other):
            return Poly(self.c * float(other))
        return Poly(np.convolve(self.c, _as_poly(other).c))

    __rmul__ = __mul__

    def deriv(self) -> "Poly":
        if len(self.c) == 1:
            return Poly([0.0])
        return Poly(self.c[1:] * np.arange(1, len(self.c)))

    def residual_bound(self, x: float) -> float:
        """Scale for the residual test |p(x)| <= tol * bound."""
        return self.norm() * max(1.0, abs(x)) ** max(self.degree, 0)

    def __eq__(self, other):
        other = _as_poly(other)
        return len(self.c) == len(other.c) and bool(np.all(self.c == other.c))

    def __hash__(self):
        return hash(tuple(self.c))

    def __repr__(self):
        return f"Poly({self.c.tolist()})"


def _horner(c, x: float) -> float:
    acc = 0.0
    for a in c[::-1].tolist():
        acc = acc * x + a
    return acc


def _as_poly(x) -> Poly:
    return x if isinstance(x, Poly) else Poly([float(x)])


def _working_coeffs(p: Poly) -> np.ndarray:
    """Coefficients with numerically negligible leading terms removed."""
    if p.is_zero():
        raise ZeroPolynomial("polynomial is identically zero")
    c = p.c
    big = np.max(np.abs(c))
    keep = np.flatnonzero(np.abs(c) > _LEAD_TRIM * big)
    return c[: keep[-1] + 1]


def _polish(c: np.ndarray, x: float, iters: int = 8) -> float:
    """Newton iterations on ascending coefficients c, keeping the best iterate."""
    pv = _horner
    dc = c[1:] * np.arange(1, len(c))
    best, best_res = x, abs(pv(c, x))
    for _ in range(iters):
        d = pv(dc, x)
        if d == 0.0 or best_res == 0.0:
            break
        step = pv(c, x) / d
        x = x - step
        res = abs(pv(c, x))
        if res < best_res:
            best, best_res = x, res
        elif res > 4.0 * best_res:
            break
        if abs(step) <= 1e-16 * max(1.0, abs(x)):
            break
    return best


def _accept(c: np.ndarray, x: float) -> bool:
    scale = np.max(np.abs(c)) * max(1.0, abs(x)) ** (len(c) - 1)
    return abs(_horner(c, x)) <= RESIDUAL_TOL * scale


def _dedup(roots: Sequence[float]) -> list[float]:
    out: list[float] = []
    for r in sorted(roots):
        if out and abs(r - out[-1]) <= ROOT_DEDUP_TOL * max(1.0, abs(r)):
            continue
        out.append(float(r))
    return out


def _finish(c: np.ndarray, candidates: Iterable[float]) -> list[float]:
    roots = []
    for x in candidates:
        x = _polish(c, float(x))
        if np.isfinite(x) and _accept(c, x):
            roots.append(x)
    return _dedup(roots)


def _companion_candidates(c: np.ndarray) -> list[float]:
    """Real parts of (clustered) companion eigenvalues that are nearly real."""
    nzero = int(np.argmax(c != 0.0))
    cands = [0.0] if nzero else []
    c = c[nzero:]
    if len(c) == 2:
        return cands + [-c[0] / c[1]]
    if len(c) < 2:
        return cands
    ev = np.roots(c[::-1])
    ev = ev[np.argsort(ev.real)]
    used = np.zeros(len(ev), bool)
    for i, z in enumerate(ev):
        if used[i]:
            continue
        near = (~used) & (np.abs(ev - z) <= _CLUSTER_TOL * max(1.0, abs(z)))
        used |= near
        zc = ev[near].mean()
        if abs(zc.imag) <= _IMAG_TOL * max(1.0, abs(zc)):
            cands.append(zc.real)
    return cands


def real_roots(p: Poly) -> list[float]:
    """All real roots of p (degree <= 8 in practice), ascending.

    Companion-matrix eigenvalues seed Newton polishing; clusters of
    eigenvalues from a multiple root are averaged first, which recovers the
    root far more accurately than any single member of the cluster.
    """
    c = _working_coeffs(p)
    if len(c) == 1:
        return []
    return _finish(c, _companion_candidates(c))


def _quadratic(a: float, b: float, c: float) -> list[float] | None:
    """Real roots of a x^2 + b x + c, or None when the discriminant is marginal."""
    disc = b * b - 4.0 * a * c
    scale = b * b + abs(4.0 * a * c)
    if abs(disc) <= 1e-12 * scale:
        return None
    if disc < 0:
        return []
    q = -0.5 * (b + math.copysign(math.sqrt(disc), b))
    if q == 0.0:
        return [0.0, 0.0]
    return [q / a, c / q]


def _cubic_monic(a: float, b: float, c: float) -> list[float]:
    """Real roots of x^3 + a x^2 + b x + c."""
    p = b - a * a / 3.0
    q = 2.0 * a**3 / 27.0 - a * b / 3.0 + c
    shift = -a / 3.0
    disc = (q / 2.0) ** 2 + (p / 3.0) ** 3
    if p == 0.0 and q == 0.0:
        return [shift]
    if disc > 0:
        u = np.cbrt(-q / 2.0 - math.copysign(math.sqrt(disc), q))
        t = u - p / (3.0 * u) if u != 0.0 else np.cbrt(-q)
        return [t + shift]
    rho = 2.0 * math.sqrt(-p / 3.0)
    arg = min(1.0, max(-1.0, (3.0 * q / (2.0 * p)) * math.sqrt(-3.0 / p)))
    phi = math.acos(arg)
    return [rho * math.cos(phi / 3.0 - 2.0 * math.pi * k / 3.0) + shift for k in range(3)]


def _ferrari(c: np.ndarray) -> list[float] | None:
    """Candidate real roots of a quartic; None signals an ill-conditioned case."""
    a3, a2, a1, a0 = c[3] / c[4], c[2] / c[4], c[1] / c[4], c[0] / c[4]
    p = a2 - 3.0 * a3 * a3 / 8.0
    q = a3**3 / 8.0 - a3 * a2 / 2.0 + a1
    r = -3.0 * a3**4 / 256.0 + a3 * a3 * a2 / 16.0 - a3 * a1 / 4.0 + a0
    shift = -a3 / 4.0
    scale = max(abs(p), math.sqrt(abs(r)), abs(q) ** (2.0 / 3.0), 1e-300)
    if q == 0.0:
        zs = _quadratic(1.0, p, r)
        if zs is None:
            return None
        ys = []
        for z in zs:
            if z >= 0:
                ys += [math.sqrt(z), -math.sqrt(z)]
        return [y + shift for y in ys]
    # resolvent: m^3 + p m^2 + (p^2/4 - r) m - q^2/8 = 0, largest root is > 0
    cubic = np.array([-q * q / 8.0, p * p / 4.0 - r, p, 1.0])
    m = _polish(cubic, max(_cubic_monic(p, p * p / 4.0 - r, -q * q / 8.0)))
    if not m > 1e-12 * scale:
        return None
    s = math.sqrt(2.0 * m)
    ys: list[float] = []
    for sign in (1.0, -1.0):
        roots = _quadratic(1.0, -sign * s, p / 2.0 + m + sign * q / (2.0 * s))
        if roots is None:
            return None
        ys += roots
    return [y + shift for y in ys]


def quartic_real_roots(p: Poly) -> list[float]:
    """Real roots of a polynomial of degree <= 4 in closed form, ascending.

    Falls back to the companion matrix when the closed form is
    ill-conditioned or a candidate fails the residual check.
    """
    c = _working_coeffs(p)
    deg = len(c) - 1
    if deg > 4:
        raise ValueError(f"degree {deg} > 4")
    if deg == 0:
        return []
    if deg == 1:
        return [float(-c[0] / c[1])]
    if deg == 2:
        cands = _quadratic(c[2], c[1], c[0])
    elif deg == 3:
        cands = _cubic_monic(c[2] / c[3], c[1] / c[3], c[0] / c[3])
    else:
        cands = _ferrari(c)
    if cands is None:
        return real_roots(Poly(c))
    roots = []
    for x in cands:
        x = _polish(c, float(x))
        if not _accept(c, x):
            return real_roots(Poly(c))
        roots.append(x)
    return _dedup(roots)


def common_real_roots(ps: Sequence[Poly], tol: float = 1e-8) -> list[float]:
    """Real roots shared by every nonzero polynomial in ps.

    Roots of the lowest-degree nonzero member are kept when every other
    member evaluates below ``tol * norm * max(1, |r|)^deg`` there.
    """
    nonzero = [p for p in ps if not p.is_zero()]
    if not nonzero:
        raise ZeroPolynomial("all polynomials are identically zero")
    order = sorted(range(len(nonzero)), key=lambda i: nonzero[i].degree)
    base = nonzero[order[0]]
    others = [nonzero[i] for i in order[1:]]
    if base.degree == 0:
        return []
    roots = quartic_real_roots(base) if base.degree <= 4 else real_roots(base)
    return [r for r in roots if all(abs(q(r)) <= tol * q.residual_bound(r) for q in others)]
