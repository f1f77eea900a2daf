"""Discretized maps u: grid in R^{4m} -> R^{4n}: differentials, the
quaternionic del-bar residual, the pointwise energy identity, Jacobian-form
Laplacian, pullback closedness, domain variations, and a heat-flow generator.

Grids are either dense (values stored per node) or function-backed (values
produced on demand, slab by slab), so ball quadrature at fine spacings never
materializes the full 4-D array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exterior import KForm, basis_form, index_tuples, wedge, wedge_power
from .quat import ONE, QI, QJ, QK, StructureTriple, kaehler_form, quat_mul_array

__all__ = [
    "GridField",
    "Jet",
    "differential",
    "triholo_residual",
    "dirichlet_energy",
    "energy_identity_defect",
    "energy_identity_defects",
    "laplacian_direct",
    "laplacian_jacobian_form",
    "pullback_closedness_defect",
    "domain_variation_derivative",
    "heat_flow_step",
    "save_fld1",
    "load_fld1",
    "FueterPolynomialMap",
    "standard_triholomorphic_field",
    "triholomorphic_suite",
    "residual_operator_matrix",
    "triholomorphic_kernel",
]

_DENSE_LIMIT_BYTES = 2_000_000_000


# ---------------------------------------------------------------------------
# grid fields


class GridField:
    """A map u from a uniform grid in R^{4m} (torus [0,L)^{4m} or box
    [-L,L]^{4m}) into R^{4n}.

    Either ``values`` (shape ``shape + (4n,)``) or ``fn`` (vectorized callable
    on (..., 4m) points) must be given.  All axes share the spacing h; a box
    needs at least 5 nodes per axis for the central stencils.
    """

    def __init__(self, m, n, domain, L, shape, values=None, fn=None):
        if domain not in ("torus", "box"):
            raise ValueError("domain must be 'torus' or 'box'")
        self.m = int(m)
        self.n = int(n)
        self.domain = domain
        self.L = float(L)
        shape = tuple(int(s) for s in shape)
        if len(shape) != 4 * self.m:
            raise ValueError(f"grid needs {4 * self.m} axes, got {len(shape)}")
        if min(shape) < 5:
            raise ValueError("need at least 5 nodes per axis")
        if len(set(shape)) != 1:
            raise ValueError("all axes share one node count")
        self.shape = shape
        N = shape[0]
        self.h = self.L / N if domain == "torus" else 2.0 * self.L / (N - 1)
        self._values = None
        self._fn = fn
        if values is not None:
            values = np.asarray(values, dtype=float)
            if values.shape != shape + (4 * self.n,):
                raise ValueError(f"values must have shape {shape + (4 * self.n,)}")
            self._values = values
        elif fn is None:
            raise ValueError("provide values or fn")

    # -- constructors

    @staticmethod
    def from_array(values, m, n, domain="box", L=0.5):
        values = np.asarray(values, dtype=float)
        return GridField(m, n, domain, L, values.shape[:-1], values=values)

    @staticmethod
    def from_function(fn, m, n, nodes, domain="box", L=0.5, materialize=False):
        g = GridField(m, n, domain, L, (nodes,) * (4 * m), fn=fn)
        if materialize:
            g.values  # noqa: B018 - force the dense cache
        return g

    # -- geometry

    @property
    def dim(self):
        return 4 * self.m

    @property
    def target_dim(self):
        return 4 * self.n

    def axis_coords(self):
        N = self.shape[0]
        if self.domain == "torus":
            return np.arange(N) * self.h
        return -self.L + np.arange(N) * self.h

    def node_point(self, node):
        c = self.axis_coords()
        return np.array([c[i] for i in node])

    def interior_margin(self):
        """Nodes this many layers from a box edge are excluded from statistics."""
        return 0 if self.domain == "torus" else 2

    def is_interior(self, node, margin=None):
        if self.domain == "torus":
            return True
        margin = self.interior_margin() if margin is None else margin
        N = self.shape[0]
        return all(margin <= i <= N - 1 - margin for i in node)

    # -- values

    @property
    def values(self):
        if self._values is None:
            nbytes = 8 * self.target_dim * int(np.prod(self.shape))
            if nbytes > _DENSE_LIMIT_BYTES:
                raise MemoryError(
                    f"refusing to materialize {nbytes / 1e9:.1f} GB; use slab access"
                )
            c = self.axis_coords()
            mesh = np.meshgrid(*([c] * self.dim), indexing="ij")
            pts = np.stack(mesh, axis=-1)
            self._values = np.asarray(self._fn(pts), dtype=float)
        return self._values

    def is_dense(self):
        return self._values is not None

    def evaluate(self, pts):
        """Values at arbitrary points: direct for function-backed grids,
        multilinear interpolation for dense ones."""
        pts = np.asarray(pts, dtype=float)
        if self._fn is not None:
            return np.asarray(self._fn(pts), dtype=float)
        return self._interpolate(pts)

    def slab(self, i):
        """Values on the hyperplane of axis-0 index i (wrapped on a torus)."""
        N = self.shape[0]
        i = i % N if self.domain == "torus" else i
        if self._values is not None:
            return self._values[i]
        c = self.axis_coords()
        rest = np.meshgrid(*([c] * (self.dim - 1)), indexing="ij")
        pts = np.stack([np.full(rest[0].shape, c[i])] + rest, axis=-1)
        return np.asarray(self._fn(pts), dtype=float)

    def _interpolate(self, pts):
        c = self.axis_coords()
        N = self.shape[0]
        vals = self.values
        x0 = c[0]
        t = (pts - x0) / self.h
        if self.domain == "torus":
            base = np.floor(t).astype(int)
            frac = t - base
            base = base % N
        else:
            eps = 1e-12
            if np.any(pts < -self.L - eps) or np.any(pts > self.L + eps):
                raise ValueError("interpolation point outside the box")
            base = np.clip(np.floor(t).astype(int), 0, N - 2)
            frac = t - base
        out = 0.0
        d = self.dim
        for corner in range(1 << d):
            idx = []
            w = 1.0
            for a in range(d):
                bit = (corner >> a) & 1
                ia = base[..., a] + bit
                if self.domain == "torus":
                    ia = ia % N
                idx.append(ia)
                w = w * (frac[..., a] if bit else 1.0 - frac[..., a])
            out = out + vals[tuple(idx)] * w[..., None]
        return out

    def with_values(self, values):
        return GridField(self.m, self.n, self.domain, self.L, self.shape, values=values)

    def __repr__(self):
        kind = "dense" if self.is_dense() else "fn"
        return (
            f"GridField(m={self.m}, n={self.n}, {self.domain}, L={self.L}, "
            f"shape={self.shape}, h={self.h:.5g}, {kind})"
        )


@dataclass
class Jet:
    """Pointwise differential: du is a 4n x 4m matrix (target per domain length)."""

    point: tuple
    du: np.ndarray

    def __post_init__(self):
        self.du = np.asarray(self.du, dtype=float)
        if not np.all(np.isfinite(self.du)):
            raise ValueError("jet entries must be finite")


def _node_value(u, node):
    if u.is_dense():
        return u.values[tuple(node)]
    return np.asarray(u._fn(u.node_point(node)), dtype=float)


def _neighbor(u, node, axis, step):
    node = list(node)
    N = u.shape[0]
    node[axis] += step
    if u.domain == "torus":
        node[axis] %= N
    return _node_value(u, node)


def differential(u: GridField, node) -> Jet:
    """Central-difference jet at a node: column a is (u(+h e_a) - u(-h e_a)) / 2h."""
    node = tuple(int(i) for i in node)
    if u.domain == "box" and not u.is_interior(node, margin=1):
        raise ValueError(f"node {node} too close to the box boundary for the stencil")
    cols = []
    for a in range(u.dim):
        cols.append((_neighbor(u, node, a, +1) - _neighbor(u, node, a, -1)) / (2.0 * u.h))
    return Jet(node, np.stack(cols, axis=1))


# ---------------------------------------------------------------------------
# pointwise algebra: residual and energy identity


def triholo_residual(j, S_dom: StructureTriple, S_tar: StructureTriple, connection=None):
    """R = du - I du i - J du j - K du k - (optional zeroth-order term).

    The map is flagged triholomorphic at the node when ||R||_F is below the
    caller's tolerance.
    """
    A = j.du if isinstance(j, Jet) else np.asarray(j, dtype=float)
    if A.shape != (S_tar.dim, S_dom.dim):
        raise ValueError(f"jet shape {A.shape} does not match ({S_tar.dim}, {S_dom.dim})")
    R = A.copy()
    for St, Sd in zip(S_tar.mats(), S_dom.mats()):
        R -= St @ A @ Sd
    if connection is not None:
        C = np.asarray(connection, dtype=float)
        if C.shape != A.shape:
            raise ValueError("connection term must match the jet shape")
        R -= C
    return R


def _triple_key(S: StructureTriple):
    return (S.d, hash(S.i_mat.tobytes()) ^ hash(S.j_mat.tobytes()) ^ hash(S.k_mat.tobytes()))


_identity_table_cache = {}


def _identity_tables(S_dom, S_tar):
    """Pairing tables K_l with (alpha_l^(2m-1) ^ G)(vol) = sum_{a<b} K_l[a,b] G_{ab},
    computed once from the honest exterior algebra."""
    key = (_triple_key(S_dom), _triple_key(S_tar))
    if key in _identity_table_cache:
        return _identity_table_cache[key]
    m = S_dom.d
    dm = S_dom.dim
    tables = []
    for which in ("i", "j", "k"):
        alpha = kaehler_form(S_dom, which)
        P = wedge_power(alpha, 2 * m - 1)
        K = np.zeros((dm, dm))
        for (a, b) in index_tuples(dm, 2):
            top = wedge(P, basis_form(dm, (a, b)))
            K[a, b] = top.coeffs[0]
            K[b, a] = -top.coeffs[0]
        tables.append(K)
    W = [kaehler_form(S_tar, w).as_matrix() for w in ("i", "j", "k")]
    _identity_table_cache[key] = (tables, W)
    return tables, W


def energy_identity_defect(j, S_dom: StructureTriple, S_tar: StructureTriple) -> float:
    """LHS - RHS of the pointwise energy identity, which vanishes for every jet.

    LHS = -(1/(2m-1)!) [a_1^(2m-1) ^ v*O_I + a_2^(2m-1) ^ v*O_J
          + a_3^(2m-1) ^ v*O_K] on the unit volume, and
    RHS = 1/2 |dv|^2 - 1/8 |dv - I dv i - J dv j - K dv k|^2.

    The 1/8 is forced by the left-multiplication convention: with it the
    identity is exact algebra for arbitrary jets, and for triholomorphic
    jets the LHS reduces to 1/2 |dv|^2.
    """
    A = j.du if isinstance(j, Jet) else np.asarray(j, dtype=float)
    return float(energy_identity_defects(A[None], S_dom, S_tar)[0])


def energy_identity_defects(As, S_dom, S_tar):
    """Vectorized defect over a batch of jets (N, 4n, 4m)."""
    As = np.asarray(As, dtype=float)
    tables, W = _identity_tables(S_dom, S_tar)
    m = S_dom.d
    fact = math.factorial(2 * m - 1)
    lhs = np.zeros(As.shape[0])
    for K, Wl in zip(tables, W):
        G = np.einsum("nia,ij,njb->nab", As, Wl, As)
        lhs += 0.5 * np.einsum("ab,nab->n", K, G)
    lhs = -lhs / fact
    R = As.copy()
    for St, Sd in zip(S_tar.mats(), S_dom.mats()):
        R -= np.einsum("ij,njk,kl->nil", St, As, Sd)
    rhs = 0.5 * np.einsum("nab,nab->n", As, As) - 0.125 * np.einsum("nab,nab->n", R, R)
    return lhs - rhs


def residual_operator_matrix(S_dom, S_tar):
    """The residual A -> R(A) as a matrix on vectorized jets (the kernel oracle)."""
    dm, dn = S_dom.dim, S_tar.dim
    M = np.zeros((dn * dm, dn * dm))
    for p in range(dn * dm):
        E = np.zeros((dn, dm))
        E[p // dm, p % dm] = 1.0
        M[:, p] = triholo_residual(E, S_dom, S_tar).reshape(-1)
    return M


def triholomorphic_kernel(S_dom, S_tar, tol=1e-10):
    """Kernel of the linear residual, via SVD of the oracle matrix.

    Returns (dimension, basis) where basis[k] is a 4n x 4m jet with
    ||triholo_residual(basis[k])|| at roundoff level.
    """
    M = residual_operator_matrix(S_dom, S_tar)
    _, s, Vt = np.linalg.svd(M)
    if s.max() == 0.0:
        null = Vt
    else:
        k = int(np.sum(s < tol * s.max()))
        null = Vt[len(s) - k :] if k else Vt[:0]
    basis = [v.reshape(S_tar.dim, S_dom.dim) for v in null]
    return len(basis), basis


# ---------------------------------------------------------------------------
# grid-level operators


def _du_squared_slabs(u):
    """Yield (i0, |du|^2 over the interior of slab i0), streaming three slabs
    at a time so the full field is never materialized.

    On a box the rolled neighbors are wrong only on the outermost layer of
    each remaining axis, which the 2h interior margin excludes anyway.
    """
    N = u.shape[0]
    margin = u.interior_margin()
    d = u.dim
    i_range = range(N) if u.domain == "torus" else range(margin, N - margin)
    inner = tuple(
        slice(None) if u.domain == "torus" else slice(margin, N - margin)
        for _ in range(d - 1)
    )
    cache = {}

    def get(i):
        key = i % N if u.domain == "torus" else i
        if key not in cache:
            cache[key] = u.slab(key)
        return cache[key]

    for i in i_range:
        sm, s0, sp = get(i - 1), get(i), get(i + 1)
        acc = np.sum(((sp - sm) / (2 * u.h)) ** 2, axis=-1)
        for a in range(1, d):
            plus = np.roll(s0, -1, axis=a - 1)
            minus = np.roll(s0, +1, axis=a - 1)
            acc += np.sum(((plus - minus) / (2 * u.h)) ** 2, axis=-1)
        yield i, acc[inner]
        cache.pop((i - 1) % N if u.domain == "torus" else i - 1, None)


def dirichlet_energy(u: GridField) -> float:
    """sum over interior nodes of |du|^2_F h^{4m}, without the 1/2 factor."""
    total = 0.0
    for _, block in _du_squared_slabs(u):
        total += float(block.sum())
    return total * u.h**u.dim


def laplacian_direct(u: GridField, node) -> np.ndarray:
    """sum_a (u(+h e_a) - 2 u + u(-h e_a)) / h^2 at an interior node."""
    node = tuple(int(i) for i in node)
    if u.domain == "box" and not u.is_interior(node, margin=1):
        raise ValueError("laplacian stencil reaches the boundary")
    c = _node_value(u, node)
    out = np.zeros(u.target_dim)
    for a in range(u.dim):
        out += (_neighbor(u, node, a, +1) - 2 * c + _neighbor(u, node, a, -1)) / u.h**2
    return out


def laplacian_jacobian_form(u: GridField, node, S_dom, S_tar) -> np.ndarray:
    """The Laplacian rewritten as a sum of 2x2 Jacobians d_a(psi) d_s(phi) -
    d_s(psi) d_a(phi), with psi built from the structure coefficients composed
    with u and phi the components of u.  All derivatives central.

    For flat structures psi is constant along the grid, so the Jacobian terms
    are evaluated to exact zeros; agreement with laplacian_direct on
    triholomorphic fields then expresses flat-target harmonicity.
    """
    node = tuple(int(i) for i in node)
    if u.domain == "box" and not u.is_interior(node, margin=2):
        raise ValueError("jacobian form needs a 2h-interior node")
    d = u.dim
    dn = u.target_dim

    def u_at(offsets):
        nd = list(node)
        for ax, st in offsets:
            nd[ax] += st
            if u.domain == "torus":
                nd[ax] %= u.shape[0]
        return _node_value(u, nd)

    out = np.zeros(dn)
    for Sd, St in zip(S_dom.mats(), S_tar.mats()):
        for s in range(d):
            for a in range(s + 1, d):
                coeff = Sd[s, a]
                if coeff == 0.0:
                    continue
                # psi at the four stencil nodes (structure coefficients composed
                # with u; constant for flat structures): shape (4n, 4n)
                psi = {off: coeff * St for off in (("a", +1), ("a", -1), ("s", +1), ("s", -1))}
                dpsi_da = (psi[("a", +1)] - psi[("a", -1)]) / (2 * u.h)
                dpsi_ds = (psi[("s", +1)] - psi[("s", -1)]) / (2 * u.h)
                du_ds = (u_at([(s, +1)]) - u_at([(s, -1)])) / (2 * u.h)
                du_da = (u_at([(a, +1)]) - u_at([(a, -1)])) / (2 * u.h)
                out += dpsi_da @ du_ds - dpsi_ds @ du_da
    return out


def pullback_closedness_defect(u: GridField, Omega: KForm) -> float:
    """Max over interior 3-cells of the Stokes sum of u*Omega over the cell
    faces, normalized by cell volume; zero for closed pullbacks.

    Omega must be a constant-coefficient (hence closed) 2-form on the target.
    """
    if Omega.k != 2 or Omega.n != u.target_dim:
        raise ValueError("Omega must be a 2-form on the target")
    W = Omega.as_matrix()
    vals = u.values
    d = u.dim
    h = u.h
    if u.domain == "torus":
        # wrap-pad two layers so the box slicing below covers every cell
        vals = np.pad(vals, [(2, 2)] * d + [(0, 0)], mode="wrap")
    N = vals.shape[0]

    # du at every 1-interior node, then the pullback 2-form G_{ab} = (du^T W du)_{ab}
    sl_in = tuple(slice(1, N - 1) for _ in range(d))
    du = np.empty(vals[sl_in].shape[:-1] + (u.target_dim, d))
    for a in range(d):
        up = [slice(1, N - 1)] * d
        dn_ = [slice(1, N - 1)] * d
        up[a] = slice(2, N)
        dn_[a] = slice(0, N - 2)
        du[..., a] = (vals[tuple(up)] - vals[tuple(dn_)]) / (2 * h)
    G = np.einsum("...ia,ij,...jb->...ab", du, W, du)

    M = G.shape[0]
    if M < 3:
        raise ValueError("grid too small for interior 3-cells")

    def corner_avg(comp, base_sl, ax_pair, shift_ax=None):
        # average of G[..., ax_pair] over the 4 corners of a face
        a, b = ax_pair
        tot = 0.0
        for da in (0, 1):
            for db in (0, 1):
                sl = list(base_sl)
                sl[a] = slice(sl[a].start + da, sl[a].stop + da)
                sl[b] = slice(sl[b].start + db, sl[b].stop + db)
                if shift_ax is not None:
                    ax, st = shift_ax
                    sl[ax] = slice(sl[ax].start + st, sl[ax].stop + st)
                tot = tot + comp[tuple(sl)]
        return tot / 4.0

    worst = 0.0
    base = [slice(0, M - 1)] * d
    for (a, b, c) in index_tuples(d, 3):
        Gbc, Gac, Gab = G[..., b, c], G[..., a, c], G[..., a, b]
        s = corner_avg(Gbc, base, (b, c), (a, 1)) - corner_avg(Gbc, base, (b, c), (a, 0))
        s -= corner_avg(Gac, base, (a, c), (b, 1)) - corner_avg(Gac, base, (a, c), (b, 0))
        s += corner_avg(Gab, base, (a, b), (c, 1)) - corner_avg(Gab, base, (a, b), (c, 0))
        worst = max(worst, float(np.max(np.abs(s))) / h)
    return worst


def domain_variation_derivative(u: GridField, X, t=None) -> float:
    """d/dt at t=0 of the Dirichlet energy of u composed with Id + tX,
    by a symmetric difference in t with resampled fields.

    X is a vectorized callable on points, vanishing near the box boundary.
    """
    if u.domain != "box":
        raise ValueError("domain variations are defined on box grids")
    if t is None:
        t = u.h / 8.0
    c = u.axis_coords()
    mesh = np.meshgrid(*([c] * u.dim), indexing="ij")
    pts = np.stack(mesh, axis=-1)
    Xv = np.asarray(X(pts), dtype=float)
    # support must stay clear of the boundary: check the outer 4h shell
    N = u.shape[0]
    shell = np.zeros(u.shape, dtype=bool)
    for a in range(u.dim):
        sl = [slice(None)] * u.dim
        sl[a] = slice(0, 4)
        shell[tuple(sl)] = True
        sl[a] = slice(N - 4, N)
        shell[tuple(sl)] = True
    if np.max(np.linalg.norm(Xv, axis=-1)[shell]) > 1e-14:
        raise ValueError("vector field support touches the boundary layer")

    def energy_at(tt):
        moved = pts + tt * Xv
        resampled = u.evaluate(moved)
        return dirichlet_energy(u.with_values(resampled))

    return (energy_at(t) - energy_at(-t)) / (2.0 * t)


def heat_flow_step(u: GridField, dt: float) -> GridField:
    """Forward-Euler heat step u + dt * Laplacian(u); requires dt <= h^2/(8m).

    At the stability bound every Fourier mode is damped (weakly), so the
    Dirichlet energy never increases.
    """
    if dt > u.h**2 / (8.0 * u.m) * (1 + 1e-12):
        raise ValueError(f"dt={dt} exceeds the stability bound h^2/(8m)")
    vals = u.values
    d = u.dim
    lap = np.zeros_like(vals)
    if u.domain == "torus":
        for a in range(d):
            lap += (np.roll(vals, -1, axis=a) - 2 * vals + np.roll(vals, +1, axis=a)) / u.h**2
        new = vals + dt * lap
    else:
        N = u.shape[0]
        inner = tuple(slice(1, N - 1) for _ in range(d))
        lap_in = np.zeros(vals[inner].shape)
        for a in range(d):
            up = [slice(1, N - 1)] * d
            dn_ = [slice(1, N - 1)] * d
            up[a] = slice(2, N)
            dn_[a] = slice(0, N - 2)
            lap_in += (vals[tuple(up)] - 2 * vals[inner] + vals[tuple(dn_)]) / u.h**2
        new = vals.copy()
        new[inner] = vals[inner] + dt * lap_in
    return u.with_values(new)


# ---------------------------------------------------------------------------
# FLD1 file format


def save_fld1(u: GridField, path):
    """ASCII header + raw little-endian float64 payload; bit-exact round trip."""
    dims = ",".join(str(s) for s in u.shape)
    header = f"FLD1 m={u.m} n={u.n} domain={u.domain} L={u.L!r} h={u.h!r} dims={dims}\n"
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(np.ascontiguousarray(u.values, dtype="<f8").tobytes())


def load_fld1(path) -> GridField:
    with open(path, "rb") as f:
        header = f.readline().decode("ascii").strip()
        payload = f.read()
    parts = header.split()
    if not parts or parts[0] != "FLD1":
        raise ValueError("not an FLD1 file")
    kv = dict(p.split("=", 1) for p in parts[1:])
    m, n = int(kv["m"]), int(kv["n"])
    domain = kv["domain"]
    L = float(kv["L"])
    shape = tuple(int(s) for s in kv["dims"].split(","))
    count = int(np.prod(shape)) * 4 * n
    values = np.frombuffer(payload, dtype="<f8", count=count).reshape(shape + (4 * n,))
    g = GridField(m, n, domain, L, shape, values=values.copy())
    if abs(g.h - float(kv["h"])) > 1e-12 * max(1.0, g.h):
        raise ValueError("header spacing inconsistent with L and dims")
    return g


# ---------------------------------------------------------------------------
# triholomorphic polynomial fields (m = n = 1)
#
# The residual du - I du i - J du j - K du k vanishes exactly when the
# quaternion-valued map satisfies (d/dx0 - i d/dx1 - j d/dx2 - k d/dx3) u = 0.
# Solutions are generated by the conjugated linear variables
# z_l(x) = -(x_l + e_l x0), their powers, symmetrized mixed products, and
# right quaternion coefficients.

_UNITS = [ONE.as_array(), QI.as_array(), QJ.as_array(), QK.as_array()]


def _z_value(pts, ell):
    out = np.zeros(pts.shape[:-1] + (4,))
    out[..., 0] = -pts[..., ell]
    out[..., ell] = -pts[..., 0]
    return out


def _z_grad(ell):
    """d z_l / d x_a as constant quaternions, a = 0..3."""
    g = [np.zeros(4) for _ in range(4)]
    g[0] = -_UNITS[ell]
    g[ell] = -_UNITS[0].copy()
    return g


class FueterPolynomialMap:
    """Quaternion polynomial u(x) = sum over terms of sym(z_{i1}...z_{ik}) c,
    with right quaternion coefficients; every such map is triholomorphic and
    componentwise harmonic.

    Evaluation expands the symmetrized quaternion products once into plain
    monomials in (x0..x3) with quaternion coefficients; `value_direct` keeps
    the product-form evaluation as an independent cross-check.
    """

    def __init__(self, terms):
        # terms: list of (indices tuple with entries in {1,2,3}, coeff (4,))
        self.terms = [(tuple(idx), np.asarray(c, dtype=float)) for idx, c in terms]
        self._compiled = None

    def _arrangements(self, idx):
        import itertools as it

        return sorted(set(it.permutations(idx)))

    def value_direct(self, pts):
        """Symmetrized quaternion-product evaluation (slow reference)."""
        pts = np.asarray(pts, dtype=float)
        out = np.zeros(pts.shape[:-1] + (4,))
        for idx, c in self.terms:
            if len(idx) == 0:
                out += c
                continue
            arr = self._arrangements(idx)
            acc = np.zeros_like(out)
            for order in arr:
                prod = _z_value(pts, order[0])
                for ell in order[1:]:
                    prod = quat_mul_array(prod, _z_value(pts, ell))
                acc += prod
            acc /= len(arr)
            out += quat_mul_array(acc, c)
        return out

    # -- monomial expansion

    def _expand(self):
        if self._compiled is not None:
            return self._compiled

        def z_poly(ell):
            # z_l = -(x_l + e_l x0) as {exponent tuple: quaternion coeff}
            e0 = [0, 0, 0, 0]
            e0[ell] = 1
            el = (1, 0, 0, 0)
            return {tuple(e0): -_UNITS[0].copy(), el: -_UNITS[ell].copy()}

        def poly_mul(p, q):
            out = {}
            for ea, ca in p.items():
                for eb, cb in q.items():
                    e = tuple(x + y for x, y in zip(ea, eb))
                    c = quat_mul_array(ca, cb)
                    out[e] = out.get(e, 0.0) + c
            return out

        total = {}
        for idx, c in self.terms:
            if len(idx) == 0:
                term = {(0, 0, 0, 0): _UNITS[0].copy()}
            else:
                arr = self._arrangements(idx)
                term = {}
                for order in arr:
                    prod = z_poly(order[0])
                    for ell in order[1:]:
                        prod = poly_mul(prod, z_poly(ell))
                    for e, cc in prod.items():
                        term[e] = term.get(e, 0.0) + cc / len(arr)
            for e, cc in term.items():
                total[e] = total.get(e, 0.0) + quat_mul_array(cc, c)

        exps = np.array(sorted(total.keys()), dtype=int).reshape(-1, 4)
        coefs = np.stack([total[tuple(e)] for e in exps])
        self._compiled = (exps, coefs)
        return self._compiled

    def _monomials_t(self, flat, exps, out=None):
        """Monomial matrix (T, P), written row-contiguously."""
        P = flat.shape[0]
        maxe = int(exps.max()) if len(exps) else 0
        pows = []
        for a in range(4):
            col = np.ascontiguousarray(flat[:, a])
            pa = [None, col]
            for _ in range(maxe - 1):
                pa.append(pa[-1] * col)
            pows.append(pa)
        M = np.empty((len(exps), P)) if out is None else out
        for t, e in enumerate(exps):
            row = M[t]
            row[:] = 1.0
            for a in range(4):
                if e[a]:
                    row *= pows[a][e[a]]
        return M

    def value(self, pts):
        pts = np.asarray(pts, dtype=float)
        exps, coefs = self._expand()
        flat = pts.reshape(-1, 4)
        out = np.empty((flat.shape[0], 4))
        chunk = 1 << 19
        buf = None
        for k in range(0, flat.shape[0], chunk):
            part = flat[k : k + chunk]
            if buf is None or buf.shape[1] != part.shape[0]:
                buf = np.empty((len(exps), part.shape[0]))
            M = self._monomials_t(part, exps, out=buf)
            out[k : k + chunk] = M.T @ coefs
        return out.reshape(pts.shape[:-1] + (4,))

    def jacobian(self, pts):
        """Analytic du, shape (..., 4, 4), column a = d u / d x_a."""
        pts = np.asarray(pts, dtype=float)
        exps, coefs = self._expand()
        flat = pts.reshape(-1, 4)
        cols = []
        for a in range(4):
            keep = exps[:, a] > 0
            if not keep.any():
                cols.append(np.zeros((flat.shape[0], 4)))
                continue
            de = exps[keep].copy()
            dc = coefs[keep] * de[:, a : a + 1]
            de[:, a] -= 1
            M = self._monomials_t(flat, de)
            cols.append(M.T @ dc)
        return np.stack(cols, axis=-1).reshape(pts.shape[:-1] + (4, 4))

    def __call__(self, pts):
        return self.value(pts)


def standard_triholomorphic_field(seed=0, degree=4, scale=1.0):
    """A seeded polynomial triholomorphic map H -> H of the given max degree."""
    rng = np.random.default_rng(seed)

    def coeff():
        return scale * rng.normal(size=4) / 2.0

    terms = [((ell,), coeff()) for ell in (1, 2, 3)]
    if degree >= 2:
        terms += [((1, 1), coeff()), ((2, 2), coeff()), ((1, 2), coeff()), ((2, 3), coeff())]
    if degree >= 3:
        terms += [((1, 1, 1), coeff()), ((3, 3, 3), coeff())]
    if degree >= 4:
        terms += [((1, 1, 1, 1), coeff()), ((2, 2, 2, 2), coeff())]
    return FueterPolynomialMap(terms)


def triholomorphic_suite():
    """The fixed calibration suite of triholomorphic fields (seed, degree)."""
    specs = [(0, 1), (1, 2), (2, 2), (3, 4), (4, 4)]
    return [standard_triholomorphic_field(seed=s, degree=d) for s, d in specs]
