"""Energy ratios, the exact flat monotonicity formula, the perturbed
almost-monotone quantity, density estimation, and the eps-regularity detector.

Ball quadrature uses cell-fraction weights: cells cut by the sphere get the
fraction of 3^{4m} subcell centers inside the ball.  All passes stream over
axis-0 slabs, so function-backed grids at fine spacings stay within memory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fields import GridField, _identity_tables
from .quat import StructureTriple

__all__ = [
    "RatioProfile",
    "DensityEstimate",
    "EpsRegularityReport",
    "energy_ratio",
    "radial_term",
    "monotonicity_defect",
    "ratio_profile",
    "almost_monotone_quantity",
    "almost_monotone_sweep",
    "density_estimate",
    "eps_regularity_scan",
    "EPS_REG_GRADIENT_C",
]

# empirical gradient-estimate constant, calibrated once on the triholomorphic
# suite (max observed sup|grad| * r / sqrt(ratio) was ~2.5) and then frozen
EPS_REG_GRADIENT_C = 4.0


def _subcell_offsets(d, h):
    g = np.array([-h / 3.0, 0.0, h / 3.0])
    mesh = np.meshgrid(*([g] * d), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)  # (3^d, d)


def _hodge_dual_pairing(V):
    """Skew K with sum_{a<b} K_ab G_ab = (V ^ G)(vol) for 2-forms on R^4."""
    K = np.zeros_like(V)
    K[..., 0, 1] = V[..., 2, 3]
    K[..., 0, 2] = -V[..., 1, 3]
    K[..., 0, 3] = V[..., 1, 2]
    K[..., 1, 2] = V[..., 0, 3]
    K[..., 1, 3] = -V[..., 0, 2]
    K[..., 2, 3] = V[..., 0, 1]
    return K - np.swapaxes(K, -1, -2)


class _BallPass:
    """One streaming pass over B_rmax(center) collecting weighted sums."""

    def __init__(self, u: GridField, center, radii, annuli=(), bracket=None):
        self.u = u
        self.center = np.asarray(center, dtype=float)
        self.radii = np.asarray(sorted(radii), dtype=float)
        self.annuli = list(annuli)
        self.bracket = bracket  # None or (S_dom, S_tar, forms_fn)
        d = u.dim
        if u.domain != "box":
            raise NotImplementedError("ball quadrature expects a box domain")
        if self.center.shape != (d,):
            raise ValueError("center must be a point of the domain")
        if not len(self.radii) and not self.annuli:
            raise ValueError("nothing to integrate")
        self.halfdiag = u.h * math.sqrt(d) / 2.0
        rmax = float(self.radii.max()) if len(self.radii) else 0.0
        for s, R in self.annuli:
            rmax = max(rmax, R)
        self.rmax = rmax
        room = u.L - np.abs(self.center).max()
        if rmax + self.halfdiag + 2 * u.h > room:
            raise ValueError("ball exits the domain interior")
        self.offsets = _subcell_offsets(d, u.h)

    def run(self):
        u = self.u
        d = u.dim
        h = u.h
        tdim = u.target_dim
        coords = u.axis_coords()
        reach = self.rmax + self.halfdiag
        # per-axis index windows: core (quadrature nodes) and extended (stencil)
        lo = [np.searchsorted(coords, self.center[a] - reach - 1e-12) for a in range(d)]
        hi = [np.searchsorted(coords, self.center[a] + reach + 1e-12, side="right") for a in range(d)]
        lo_e = [v - 1 for v in lo]
        hi_e = [v + 1 for v in hi]

        rest_coords = [coords[lo_e[a] : hi_e[a]] for a in range(1, d)]
        core_coords = [coords[lo[a] : hi[a]] for a in range(1, d)]
        ext_shape = tuple(hi_e[a] - lo_e[a] for a in range(1, d))
        core_shape = tuple(hi[a] - lo[a] for a in range(1, d))

        # flat gather indices from the core window into the extended block,
        # plus the +-1 shifts along every remaining axis (built once)
        strides = np.cumprod((ext_shape + (1,))[::-1])[::-1][1:]
        core_grids = np.meshgrid(
            *[np.arange(1, 1 + n) for n in core_shape], indexing="ij"
        )
        idx0 = sum(g.ravel() * s for g, s in zip(core_grids, strides))
        idx_shift = []
        for a in range(d - 1):
            idx_shift.append((idx0 + strides[a], idx0 - strides[a]))

        # squared distance and coordinates over the remaining axes
        sq_rest = 0.0
        for a, cc in enumerate(core_coords):
            shp = [1] * (d - 1)
            shp[a] = len(cc)
            sq_rest = sq_rest + ((cc - self.center[1 + a]) ** 2).reshape(shp)
        sq_rest = sq_rest.ravel()
        pts_rest = np.stack(
            [g.ravel() for g in np.meshgrid(*core_coords, indexing="ij")], axis=-1
        )

        n_r = len(self.radii)
        energy = np.zeros(n_r)
        bracket_sums = np.zeros(n_r)
        radial = np.zeros(len(self.annuli))

        cache = {}
        if not u.is_dense():
            mesh_e = list(np.meshgrid(*rest_coords, indexing="ij"))
            pts_ext = np.empty(mesh_e[0].shape + (d,))
            for a in range(1, d):
                pts_ext[..., a] = mesh_e[a - 1]

        def block(i):
            """Extended-window values of slab i, flattened to (P, 4n)."""
            if i not in cache:
                if u.is_dense():
                    sl = tuple([i] + [slice(lo_e[a], hi_e[a]) for a in range(1, d)])
                    cache[i] = u.values[sl].reshape(-1, tdim)
                else:
                    pts_ext[..., 0] = coords[i]
                    cache[i] = np.asarray(u._fn(pts_ext), dtype=float).reshape(-1, tdim)
            return cache[i]

        if self.bracket is not None:
            S_dom, S_tar, forms_fn = self.bracket
            tables, W = _identity_tables(S_dom, S_tar)

        for i in range(lo[0], hi[0]):
            x0 = coords[i]
            dx0sq = (x0 - self.center[0]) ** 2
            rho_sq = dx0sq + sq_rest
            sel = np.nonzero(rho_sq <= (self.rmax + self.halfdiag) ** 2)[0]
            if not len(sel):
                cache.pop(i - 1, None)
                continue
            bm, b0, bp = block(i - 1), block(i), block(i + 1)
            g0 = idx0[sel]
            du = np.empty((len(sel), tdim, d))
            du[:, :, 0] = (bp[g0] - bm[g0]) / (2 * h)
            for a in range(d - 1):
                gp, gm = idx_shift[a]
                du[:, :, 1 + a] = (b0[gp[sel]] - b0[gm[sel]]) / (2 * h)
            rho = np.sqrt(rho_sq[sel])

            pts = np.empty((len(sel), d))
            pts[:, 0] = x0
            pts[:, 1:] = pts_rest[sel]
            diff = pts - self.center
            safe = np.maximum(rho, 1e-300)
            er = diff / safe[:, None]
            du_sq = np.einsum("mia,mia->m", du, du)
            dur = np.einsum("mia,ma->mi", du, er)
            dur_sq = np.einsum("mi,mi->m", dur, dur)

            w_cache = {}
            osq = np.sum(self.offsets**2, axis=1)

            def weight(r):
                if r not in w_cache:
                    w = np.zeros(len(rho))
                    w[rho <= r - self.halfdiag] = 1.0
                    band = np.nonzero(np.abs(rho - r) <= self.halfdiag)[0]
                    if len(band):
                        # |p + o - c|^2 = rho^2 + 2 (p - c) . o + |o|^2
                        cross = diff[band] @ self.offsets.T  # (B, 3^d)
                        d2 = rho_sq[sel][band, None] + 2.0 * cross + osq[None, :]
                        w[band] = np.mean(d2 <= r * r, axis=-1)
                    w_cache[r] = w
                return w_cache[r]

            br = None
            if self.bracket is not None:
                if forms_fn is None:
                    br = 0.0
                    for K, Wl in zip(tables, W):
                        G = np.einsum("mia,ij,mjb->mab", du, Wl, du)
                        br = br + 0.5 * np.einsum("ab,mab->m", K, G)
                else:
                    Vs = np.asarray(forms_fn(pts), dtype=float)  # (M, 3, d, d)
                    br = 0.0
                    for ell, Wl in enumerate(W):
                        G = np.einsum("mia,ij,mjb->mab", du, Wl, du)
                        Kp = _hodge_dual_pairing(Vs[:, ell])
                        br = br + 0.5 * np.einsum("mab,mab->m", Kp, G)

            for k, r in enumerate(self.radii):
                w = weight(float(r))
                energy[k] += float(w @ du_sq)
                if br is not None:
                    bracket_sums[k] += float(w @ br)
            for k, (s, R) in enumerate(self.annuli):
                wa = weight(float(R)) - weight(float(s))
                sel = wa > 0
                if sel.any():
                    radial[k] += float(
                        (wa[sel] * dur_sq[sel]) @ (safe[sel] ** (2 - d))
                    )
            cache.pop(i - 1, None)

        cell = h**d
        return {
            "energy": energy * cell,
            "radial": radial * cell,
            "bracket": bracket_sums * cell,
        }


def energy_ratio(u: GridField, x, r: float) -> float:
    """r^(2-4m) * integral of |du|^2 over B_r(x), cell-fraction weighted."""
    out = _BallPass(u, x, [r]).run()
    return float(out["energy"][0] / r ** (u.dim - 2))


def radial_term(u: GridField, x, s: float, R: float) -> float:
    """Integral over B_R \\ B_s of |du(d/dr)|^2 |p-x|^(2-4m)."""
    if not s < R:
        raise ValueError("need s < R")
    if s < 3 * u.h:
        raise ValueError("inner radius below stencil resolution (need s >= 3h)")
    out = _BallPass(u, x, [], annuli=[(s, R)]).run()
    return float(out["radial"][0])


def monotonicity_defect(u: GridField, x, s: float, R: float) -> float:
    """ratio(R) - ratio(s) - 2 * radial_term(s, R); near zero for
    triholomorphic fields with flat structures.

    The factor 2 belongs to the energy convention without the 1/2: the ratio
    difference of int |du|^2 equals twice the weighted radial integral (for
    the halved energy the constant would be 1).
    """
    if not s < R:
        raise ValueError("need s < R")
    if s < 3 * u.h:
        raise ValueError("inner radius below stencil resolution (need s >= 3h)")
    out = _BallPass(u, x, [s, R], annuli=[(s, R)]).run()
    d = u.dim
    ratio_s = out["energy"][0] / s ** (d - 2)
    ratio_R = out["energy"][1] / R ** (d - 2)
    return float(ratio_R - ratio_s - 2.0 * out["radial"][0])


@dataclass
class RatioProfile:
    """Radius sweep at one center: energy ratios, annulus radial terms, defects."""

    center: np.ndarray
    radii: list
    ratios: list
    radial_terms: list  # per annulus (radii[k-1], radii[k]); first entry 0
    defects: list

    def to_csv(self) -> str:
        lines = ["r,ratio,radial_term,defect"]
        for r, q, t, dft in zip(self.radii, self.ratios, self.radial_terms, self.defects):
            lines.append(f"{r:.17g},{q:.17g},{t:.17g},{dft:.17g}")
        return "\n".join(lines) + "\n"


def ratio_profile(u: GridField, x, radii) -> RatioProfile:
    radii = sorted(float(r) for r in radii)
    annuli = list(zip(radii[:-1], radii[1:]))
    out = _BallPass(u, x, radii, annuli=annuli).run()
    d = u.dim
    ratios = [out["energy"][k] / radii[k] ** (d - 2) for k in range(len(radii))]
    radial_terms = [0.0] + list(out["radial"])
    defects = [0.0] + [
        ratios[k + 1] - ratios[k] - 2.0 * out["radial"][k] for k in range(len(radii) - 1)
    ]
    return RatioProfile(np.asarray(x, dtype=float), radii, ratios, radial_terms, defects)


def almost_monotone_quantity(u: GridField, x, r: float, perturbation=None,
                             S_dom=None, S_tar=None) -> float:
    """(1+(4m-2)r)/r^(4m-2) times the integral over B_r(x) of
    w_1^(2m-1)^u*O_I + w_2^(2m-1)^u*O_J + w_3^(2m-1)^u*O_K.

    With flat forms and u triholomorphic the bracket equals -(2m-1)!/2 |du|^2,
    so the value is negative; `perturbation` may supply position-dependent
    domain 2-forms (m=1 only), as callable points -> (..., 3, 4, 4) skew
    matrices.
    """
    S_dom = S_dom or StructureTriple.standard(u.m)
    S_tar = S_tar or StructureTriple.standard(u.n)
    if perturbation is not None and u.m != 1:
        raise ValueError("position-dependent forms are supported for m=1 only")
    out = _BallPass(u, x, [r], bracket=(S_dom, S_tar, perturbation)).run()
    d = u.dim
    return float((1.0 + (d - 2) * r) / r ** (d - 2) * out["bracket"][0])


def almost_monotone_sweep(u: GridField, x, radii, perturbation=None,
                          S_dom=None, S_tar=None):
    """Evaluate the almost-monotone quantity on a decreasing radius sweep.

    Returns (values, violation): `values` follow the sweep order; `violation`
    is the largest failure of weak monotonicity of the energy-normalized
    sequence (for flat triholomorphic fields it is quadrature-level, for
    perturbed forms it grows like eps * r).
    """
    S_dom = S_dom or StructureTriple.standard(u.m)
    S_tar = S_tar or StructureTriple.standard(u.n)
    radii = sorted((float(r) for r in radii), reverse=True)
    out = _BallPass(u, x, sorted(radii), bracket=(S_dom, S_tar, perturbation)).run()
    d = u.dim
    m = u.m
    by_r = dict(zip(sorted(radii), out["bracket"]))
    values = [(1.0 + (d - 2) * r) / r ** (d - 2) * by_r[r] for r in radii]
    norm = -2.0 / math.factorial(2 * m - 1)
    energylike = [norm * v for v in values]
    violation = 0.0
    for big, small in zip(energylike[:-1], energylike[1:]):
        violation = max(violation, small - big)
    return values, float(violation)


@dataclass
class DensityEstimate:
    theta: float
    slope: float
    radii: list
    ratios: list
    reliable: bool


def density_estimate(u: GridField, x, radii=None, noise_tol=0.05) -> DensityEstimate:
    """Extrapolate the energy ratio to r -> 0 by an affine fit ratio = theta + c r
    on the three smallest reliable radii (r >= 5h)."""
    if radii is None:
        h = u.h
        radii = [5 * h, 6.5 * h, 8 * h]
    radii = sorted(float(r) for r in radii)
    if radii[0] < 5 * u.h - 1e-12:
        raise ValueError("density fit needs radii >= 5h")
    fit_r = radii[:3]
    out = _BallPass(u, x, radii).run()
    d = u.dim
    ratios = [out["energy"][k] / radii[k] ** (d - 2) for k in range(len(radii))]
    A = np.column_stack([np.ones(3), fit_r])
    coef, *_ = np.linalg.lstsq(A, np.asarray(ratios[:3]), rcond=None)
    # the ratio should be close to monotone in r; large dips flag bad data
    drops = [max(0.0, ratios[k] - ratios[k + 1]) for k in range(len(ratios) - 1)]
    scale = max(abs(v) for v in ratios) or 1.0
    reliable = max(drops, default=0.0) <= noise_tol * scale
    return DensityEstimate(float(coef[0]), float(coef[1]), radii, ratios, reliable)


@dataclass
class EpsRegularityReport:
    eps0: float
    r: float
    flagged: list = field(default_factory=list)  # (node, ratio, sup_grad)
    unflagged: list = field(default_factory=list)  # (node, ratio)
    bound: float = 0.0
    violations: int = 0

    def flagged_nodes(self):
        return [f[0] for f in self.flagged]


def eps_regularity_scan(u: GridField, eps0: float, r: float, stride=None,
                        constant=EPS_REG_GRADIENT_C) -> EpsRegularityReport:
    """Flag grid nodes whose energy ratio at radius r is below eps0 and check
    sup_{B_{r/2}} |du| <= C sqrt(eps0) / r on the flagged balls."""
    import itertools

    d = u.dim
    h = u.h
    coords = u.axis_coords()
    N = len(coords)
    margin = int(np.ceil((r + u.h * math.sqrt(d) / 2 + 2 * h) / h)) + 1
    if 2 * margin >= N:
        raise ValueError("radius too large for the grid")
    if stride is None:
        stride = max(1, (N - 2 * margin) // 6)
    idx = list(range(margin, N - margin, stride))
    report = EpsRegularityReport(eps0=eps0, r=r, bound=constant * math.sqrt(eps0) / r)
    for node in itertools.product(idx, repeat=d):
        center = np.array([coords[i] for i in node])
        ratio = energy_ratio(u, center, r)
        if ratio < eps0:
            sup = _sup_gradient(u, center, r / 2.0)
            report.flagged.append((node, ratio, sup))
            if sup > report.bound:
                report.violations += 1
        else:
            report.unflagged.append((node, ratio))
    return report


def _sup_gradient(u: GridField, center, r):
    """Max Frobenius norm of the central-difference du over nodes in B_r(center)."""
    d = u.dim
    h = u.h
    coords = u.axis_coords()
    N = len(coords)
    lo = [max(1, int(np.searchsorted(coords, center[a] - r - 1e-12))) for a in range(d)]
    hi = [min(N - 1, int(np.searchsorted(coords, center[a] + r + 1e-12, side="right")))
          for a in range(d)]
    if any(l >= h_ for l, h_ in zip(lo, hi)):
        return 0.0
    ext = tuple(slice(lo[a] - 1, hi[a] + 1) for a in range(d))
    if u.is_dense():
        vals = u.values[ext]
    else:
        mesh = np.meshgrid(*[coords[ext[a]] for a in range(d)], indexing="ij")
        vals = np.asarray(u._fn(np.stack(mesh, axis=-1)), dtype=float)
    core = tuple(slice(1, vals.shape[a] - 1) for a in range(d))
    du_sq = 0.0
    for a in range(d):
        slp = list(core)
        slm = list(core)
        slp[a] = slice(2, vals.shape[a])
        slm[a] = slice(0, vals.shape[a] - 2)
        diff = (vals[tuple(slp)] - vals[tuple(slm)]) / (2 * h)
        du_sq = du_sq + np.sum(diff**2, axis=-1)
    mesh = np.meshgrid(*[coords[lo[a] : hi[a]] for a in range(d)], indexing="ij")
    rho_sq = sum((mesh[a] - center[a]) ** 2 for a in range(d))
    inside = rho_sq <= r * r
    if not inside.any():
        return 0.0
    return float(np.sqrt(du_sq[inside].max()))
