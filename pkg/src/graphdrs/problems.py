"""Desk-scale benchmark problems: congested transport and distributed SVM.

The transport problem minimizes a congestion cost over discrete flows on a
p x p grid subject to a divergence constraint and bridge/lake restrictions;
the SVM problem is a kernelized hinge-loss classifier split across a ring of
"officials" each serving a star of label-holding agents.
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .graphs import BilevelGraph, OrderedDigraph
from .operators import (
    OperatorError,
    project_affine,
    project_capacity,
    prox_group_l1,
    prox_hinge_affine,
    prox_power_three_halves,
    prox_quadratic,
)

# ---------------------------------------------------------------------------
# congested transport
#
# A flow is a vector of length 2*p*p storing (sx, sy) per cell, row-major:
# entries (2k, 2k+1) belong to cell k = row*p + col.  sx is the flux from a
# cell to its right neighbor, sy to the one below; fluxes that would cross
# the outer boundary are omitted (no-flux boundary), which keeps the
# divergence matrix integer-valued with exactly zero column sums.


@dataclass(frozen=True)
class TransportInstance:
    p: int
    mu: np.ndarray
    nu: np.ndarray
    div: sparse.csr_matrix  # (n, 2n)
    bridge: np.ndarray      # cell indices
    water: np.ndarray
    cap: float

    @property
    def n_cells(self):
        return self.p * self.p


def divergence_matrix(p):
    """Forward-difference divergence with no-flux boundary, shape (p^2, 2 p^2)."""
    n = p * p
    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    for r in range(p):
        for c in range(p):
            k = r * p + c
            if c < p - 1:
                add(k, 2 * k, 1.0)
                add(k + 1, 2 * k, -1.0)
            if r < p - 1:
                add(k, 2 * k + 1, 1.0)
                add(k + p, 2 * k + 1, -1.0)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, 2 * n))


def gaussian_density(p, center, width, zero_cells=()):
    """Gaussian blob on the grid, clipped on the given cells, sum normalized to 1."""
    rr, cc = np.meshgrid(np.arange(p), np.arange(p), indexing="ij")
    dens = np.exp(-((rr - center[0]) ** 2 + (cc - center[1]) ** 2) / (2.0 * width**2))
    dens = dens.ravel()
    if len(zero_cells):
        dens[np.asarray(zero_cells, dtype=int)] = 0.0
    total = dens.sum()
    if total <= 0:
        raise ValueError("density vanishes after clipping")
    return dens / total


def rect_cells(p, rect):
    """Cell indices of an inclusive rectangle (r0, c0, r1, c1)."""
    r0, c0, r1, c1 = rect
    if not (0 <= r0 <= r1 < p and 0 <= c0 <= c1 < p):
        raise ValueError(f"rectangle {rect} outside the {p}x{p} grid")
    out = []
    for r in range(r0, r1 + 1):
        out.extend(r * p + c for c in range(c0, c1 + 1))
    return np.array(out, dtype=int)


def default_transport_geometry(p):
    """Lake strip across the middle with a wide bridge, blobs above and below."""
    strip0, strip1 = 3 * p // 7, 4 * p // 7
    # narrow side lakes: total bridge capacity stays well above the unit mass
    # that must cross, keeping the default instance comfortably feasible
    gap = max(1, p // 16)
    bridge = (strip0, gap, strip1, p - 1 - gap)
    water_left = (strip0, 0, strip1, gap - 1)
    water_right = (strip0, p - gap, strip1, p - 1)
    mu_center = (p // 5, p // 2)
    nu_center = (4 * p // 5, p // 2)
    return {
        "bridge": bridge,
        "water": (water_left, water_right),
        "mu_center": mu_center,
        "nu_center": nu_center,
        "blob_width": p / 8.0,
    }


def build_transport(p, mu_spec=None, nu_spec=None, bridge=None, water=None,
                    cap=5e-2):
    """Assemble a transport instance and its four resolvents.

    mu_spec / nu_spec are (center, width) pairs or explicit density arrays;
    bridge and water are rectangles or iterables of rectangles (defaults
    from :func:`default_transport_geometry`).  Operator order: divergence
    projection, 3/2-power prox, group-l1 prox, capacity projection.
    """
    if cap <= 0:
        raise ValueError("capacity must be positive")
    geo = default_transport_geometry(p)
    if bridge is None:
        bridge = geo["bridge"]
    if water is None:
        water = geo["water"]

    def cells_of(spec):
        spec = list(spec)
        if spec and np.isscalar(spec[0]):
            spec = [spec]
        if not spec:
            return np.array([], dtype=int)
        return np.unique(np.concatenate([rect_cells(p, r) for r in spec]))

    bridge_cells = cells_of(bridge)
    water_cells = cells_of(water)
    if np.intersect1d(bridge_cells, water_cells).size:
        raise ValueError("bridge and water regions overlap")

    def density_of(spec, default_center):
        if spec is None:
            return gaussian_density(p, default_center, geo["blob_width"], water_cells)
        if isinstance(spec, tuple) and len(spec) == 2 and np.isscalar(spec[1]):
            return gaussian_density(p, spec[0], spec[1], water_cells)
        dens = np.asarray(spec, dtype=float)
        if dens.min() < 0:
            raise ValueError("densities must be nonnegative")
        return dens / dens.sum()

    mu = density_of(mu_spec, geo["mu_center"])
    nu = density_of(nu_spec, geo["nu_center"])
    div = divergence_matrix(p)
    inst = TransportInstance(
        p=p, mu=mu, nu=nu, div=div,
        bridge=bridge_cells, water=water_cells, cap=cap,
    )
    ops = [
        project_affine(div, nu - mu),
        prox_power_three_halves(),
        prox_group_l1(),
        project_capacity(bridge_cells, water_cells, cap),
    ]
    # blockwise operators carry no dimension; pin it for the solver
    for op in ops:
        op.dim = 2 * p * p
    return inst, ops


def objective_transport(inst, flow):
    """Congestion cost of a flow: sum of |block|^(3/2) + |block|."""
    blocks = np.asarray(flow, dtype=float).reshape(-1, 2)
    if blocks.shape[0] != inst.n_cells:
        raise ValueError("flow length does not match the grid")
    norms = np.linalg.norm(blocks, axis=1)
    return float(np.sum(norms**1.5) + np.sum(norms))


def transport_feasibility(inst, flow):
    """Constraint residuals, reported separately from the objective."""
    blocks = np.asarray(flow, dtype=float).reshape(-1, 2)
    norms = np.linalg.norm(blocks, axis=1)
    rhs = inst.nu - inst.mu
    div_resid = float(np.linalg.norm(inst.div @ np.asarray(flow, float) - rhs))
    water_norm = float(norms[inst.water].max()) if inst.water.size else 0.0
    cap_excess = (
        float(max(0.0, norms[inst.bridge].max() - inst.cap))
        if inst.bridge.size
        else 0.0
    )
    return {
        "divergence_residual": div_resid,
        "water_norm": water_norm,
        "capacity_excess": cap_excess,
    }


def write_flow_csv(inst, flow, fh):
    """Export a flow field as rows i,j,sx,sy,magnitude (0-based grid coords)."""
    blocks = np.asarray(flow, dtype=float).reshape(-1, 2)
    fh.write("i,j,sx,sy,magnitude\n")
    for k in range(inst.n_cells):
        r, c = divmod(k, inst.p)
        sx, sy = blocks[k]
        fh.write(
            f"{r},{c},{sx:.17g},{sy:.17g},{np.hypot(sx, sy):.17g}\n"
        )


# ---------------------------------------------------------------------------
# distributed SVM


@dataclass(frozen=True)
class SvmInstance:
    points: np.ndarray   # (n, 2)
    labels: np.ndarray   # (n,) in {-1, +1}
    kernel: np.ndarray   # (n, n) Gaussian kernel matrix
    gamma: float
    kernel_width: float
    officials: int
    per_official: int
    partition: tuple     # per official: tuple of training indices

    @property
    def n_points(self):
        return self.labels.size


def svm_dataset(n, seed=0, spread=0.6):
    """Two noisy point clusters in the plane with +-1 labels, shuffled."""
    rng = np.random.default_rng(seed)
    half = n // 2
    pts = np.vstack(
        [
            rng.normal(loc=(-1.0, -1.0), scale=spread, size=(half, 2)),
            rng.normal(loc=(1.0, 1.0), scale=spread, size=(n - half, 2)),
        ]
    )
    labels = np.concatenate([-np.ones(half), np.ones(n - half)])
    perm = rng.permutation(n)
    return pts[perm], labels[perm]


def gaussian_kernel(points, width):
    diff = points[:, None, :] - points[None, :, :]
    return np.exp(-np.sum(diff**2, axis=2) / (2.0 * width**2))


def svm_bilevel_graph(officials, per_official):
    """Officials ring (closed first-to-last) with per-official agent stars.

    Node order: official c, then its agents, for c = 0..C-1.  The base graph
    drops the ring-closing edge, leaving a tree.
    """
    c_count, p = officials, per_official
    if c_count < 3:
        raise ValueError("need at least 3 officials for the ring layout")
    n_nodes = c_count * (p + 1)
    off = [c * (p + 1) for c in range(c_count)]
    edges = []
    for c in range(c_count):
        edges.extend((off[c], off[c] + 1 + i) for i in range(p))
    edges.extend((off[c], off[c + 1]) for c in range(c_count - 1))
    closing = (off[0], off[-1])
    edges.append(closing)
    state = OrderedDigraph(n_nodes, edges)
    base = OrderedDigraph(n_nodes, [e for e in edges if e != closing])
    return BilevelGraph(state, base)


def build_svm(n, officials, per_official, gamma=0.1, kernel_width=1.0, seed=0):
    """Assemble the SVM instance, its n + C resolvents, and the bilevel graph.

    Official c carries the quadratic term weighted by its share of the total
    official degree; agent (c, i) carries one hinge term.
    """
    if n != officials * per_official:
        raise ValueError("need n = officials * per_official")
    points, labels = svm_dataset(n, seed=seed)
    kernel = gaussian_kernel(points, kernel_width)
    partition = tuple(
        tuple(range(c * per_official, (c + 1) * per_official))
        for c in range(officials)
    )
    inst = SvmInstance(
        points=points, labels=labels, kernel=kernel, gamma=gamma,
        kernel_width=kernel_width, officials=officials,
        per_official=per_official, partition=partition,
    )
    bg = svm_bilevel_graph(officials, per_official)
    off_nodes = [c * (per_official + 1) for c in range(officials)]
    d_off = [bg.state.degree(node) for node in off_nodes]
    d_total = float(sum(d_off))
    ops = []
    for c in range(officials):
        ops.append(prox_quadratic(kernel, gamma * d_off[c] / d_total))
        for xi in partition[c]:
            ops.append(prox_hinge_affine(labels[xi] * kernel[xi], 1.0))
    return inst, ops, bg


def objective_svm(inst, alpha):
    """Hinge sum plus gamma-weighted kernel quadratic at coefficients alpha."""
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (inst.n_points,):
        raise ValueError("alpha length does not match the training set")
    margins = inst.labels * (inst.kernel @ alpha)
    hinge = np.maximum(1.0 - margins, 0.0).sum()
    return float(hinge + inst.gamma * alpha @ inst.kernel @ alpha)


# ---------------------------------------------------------------------------
# key = value configuration files


def load_config(path):
    """Parse a "key = value" text file; '#' starts a comment."""
    cfg = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, val = line.split("=", 1)
            cfg[key.strip()] = val.strip()
    return cfg


def _int_tuple(text):
    return tuple(int(v) for v in text.replace(",", " ").split())


def transport_from_config(cfg):
    """Build a transport instance from a parsed config dict."""
    p = int(cfg.get("p", 35))
    cap = float(cfg.get("cap", 5e-2))
    geo = default_transport_geometry(p)
    width = float(cfg.get("blob_width", geo["blob_width"]))
    mu_center = _int_tuple(cfg["mu_center"]) if "mu_center" in cfg else geo["mu_center"]
    nu_center = _int_tuple(cfg["nu_center"]) if "nu_center" in cfg else geo["nu_center"]
    bridge = _int_tuple(cfg["bridge"]) if "bridge" in cfg else None
    water = None
    if "water" in cfg:
        water = [_int_tuple(part) for part in cfg["water"].split(";") if part.strip()]
    return build_transport(
        p,
        mu_spec=(mu_center, width),
        nu_spec=(nu_center, width),
        bridge=bridge,
        water=water,
        cap=cap,
    )


def svm_from_config(cfg):
    n = int(cfg.get("n", 50))
    officials = int(cfg.get("officials", 5))
    per_official = int(cfg.get("per_official", n // officials))
    return build_svm(
        n,
        officials,
        per_official,
        gamma=float(cfg.get("gamma", 0.1)),
        kernel_width=float(cfg.get("kernel_width", 1.0)),
        seed=int(cfg.get("seed", 0)),
    )
