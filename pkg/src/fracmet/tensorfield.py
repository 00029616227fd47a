"""Node-wise tensor algebra for metrics and symmetric 2-tensors.

Coefficient arrays live on the trailing axes: a symmetric 2-tensor field has
values of shape ``grid.shape + (m, m)``.  Flattened vectors pack the fiber in
the upper-triangle order (h11, h12, h22) for m = 2 and (h11,) for m = 1, with
the node index varying slowest (row-major node order, fiber fastest).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateMetricError, ShapeError, UnsupportedBundleError
from .grid import Grid

BUNDLES = ("trivial", "TM", "T*M", "S2T*M")

#: variance of each supported bundle: 'u' = contravariant slot, 'd' = covariant
VARIANCES = {
    "trivial": (),
    "TM": ("u",),
    "T*M": ("d",),
    "S2T*M": ("d", "d"),
}

DEFAULT_SPD_FLOOR = 1e-10


def check_bundle(bundle: str) -> str:
    if bundle not in BUNDLES:
        raise UnsupportedBundleError(f"unsupported bundle {bundle!r}; expected one of {BUNDLES}")
    return bundle


def sym_basis(m: int) -> np.ndarray:
    """Basis E_a of symmetric m x m matrices in upper-triangle order.

    Off-diagonal basis elements carry 1 in both (i,j) and (j,i), so packed
    coefficients equal the tensor components h_ij.
    """
    pairs = sym_index_pairs(m)
    basis = np.zeros((len(pairs), m, m))
    for a, (i, j) in enumerate(pairs):
        basis[a, i, j] = 1.0
        basis[a, j, i] = 1.0
    return basis


def sym_index_pairs(m: int):
    return [(i, j) for i in range(m) for j in range(i, m)]


def sym_dim(m: int) -> int:
    return m * (m + 1) // 2


def fiber_dim(bundle: str, m: int) -> int:
    check_bundle(bundle)
    if bundle == "trivial":
        return 1
    if bundle in ("TM", "T*M"):
        return m
    return sym_dim(m)


def pack_sym(values: np.ndarray, m: int) -> np.ndarray:
    """(..., m, m) symmetric -> (..., d) packed components h_ij, i <= j."""
    pairs = sym_index_pairs(m)
    return np.stack([values[..., i, j] for i, j in pairs], axis=-1)


def unpack_sym(packed: np.ndarray, m: int) -> np.ndarray:
    """(..., d) packed -> (..., m, m) symmetric."""
    # basis elements carry both off-diagonal entries, so h = sum_a c_a E_a
    # reproduces the components h_ij = c_a directly
    return np.einsum("...a,aij->...ij", packed, sym_basis(m))


def pack_sym_covector(values: np.ndarray, m: int) -> np.ndarray:
    """Pack the dual of a symmetric tensor: a -> sum_ij E_a,ij S_ij.

    Off-diagonal components are doubled, so that
    dot(pack_sym_covector(S), pack_sym(h)) = sum_ij S_ij h_ij.
    """
    pairs = sym_index_pairs(m)
    comps = []
    for i, j in pairs:
        c = values[..., i, j] + (values[..., j, i] if i != j else 0.0)
        comps.append(c)
    return np.stack(comps, axis=-1)


@dataclass
class SymTensorField:
    """Section of S^2 T*M: one symmetric m x m coefficient array per node."""

    grid: Grid
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        m = self.grid.dim
        expected = self.grid.shape + (m, m)
        if self.coeffs.shape != expected:
            raise ShapeError(f"coeffs shape {self.coeffs.shape} != {expected}")
        if not np.allclose(self.coeffs, np.swapaxes(self.coeffs, -1, -2), atol=1e-12):
            raise ShapeError("coefficient arrays must be symmetric at every node")
        # enforce exact symmetry so downstream algebra sees it to roundoff
        self.coeffs = 0.5 * (self.coeffs + np.swapaxes(self.coeffs, -1, -2))

    @property
    def m(self) -> int:
        return self.grid.dim

    def flatten(self) -> np.ndarray:
        return pack_sym(self.coeffs, self.m).reshape(-1).copy()

    @classmethod
    def unflatten(cls, grid: Grid, vec: np.ndarray) -> "SymTensorField":
        m = grid.dim
        d = sym_dim(m)
        vec = np.asarray(vec, dtype=float)
        if vec.size != grid.num_nodes * d:
            raise ShapeError(
                f"vector length {vec.size} != {grid.num_nodes * d} for S2T*M on this grid"
            )
        packed = vec.reshape(grid.shape + (d,))
        return cls(grid, unpack_sym(packed, m))

    def to_json_dict(self) -> dict:
        packed = pack_sym(self.coeffs, self.m).reshape(self.grid.num_nodes, -1)
        return {"dim": self.grid.dim, "n": self.grid.n, "coeffs": packed.tolist()}

    @classmethod
    def from_json_dict(cls, data: dict, stencil_order: int = 4) -> "SymTensorField":
        grid = Grid(int(data["dim"]), int(data["n"]), stencil_order)
        packed = np.asarray(data["coeffs"], dtype=float).reshape(grid.shape + (sym_dim(grid.dim),))
        return cls(grid, unpack_sym(packed, grid.dim))


@dataclass
class MetricField(SymTensorField):
    """Node-wise positive-definite symmetric tensor field."""

    spd_floor: float = DEFAULT_SPD_FLOOR

    def __post_init__(self):
        super().__post_init__()
        eigs = np.linalg.eigvalsh(self.coeffs)
        min_eig = eigs[..., 0]
        if np.any(min_eig < self.spd_floor):
            node = np.unravel_index(np.argmin(min_eig), self.grid.shape)
            raise DegenerateMetricError(
                f"metric not positive definite at node {node}: "
                f"min eigenvalue {min_eig[node]:.3e} < spd_floor {self.spd_floor:.1e}",
                node=node,
            )

    @property
    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.coeffs)[..., 0].min())


@dataclass
class MixedTensorField:
    """(1,1)-tensor field: one m x m array per node, no symmetry assumed."""

    grid: Grid
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        m = self.grid.dim
        expected = self.grid.shape + (m, m)
        if self.coeffs.shape != expected:
            raise ShapeError(f"coeffs shape {self.coeffs.shape} != {expected}")


@dataclass
class VolumeField:
    """Node-wise positive weight sqrt(det g)."""

    grid: Grid
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != self.grid.shape:
            raise ShapeError(f"weights shape {self.weights.shape} != {self.grid.shape}")
        if np.any(self.weights <= 0.0):
            node = np.unravel_index(np.argmin(self.weights), self.grid.shape)
            raise DegenerateMetricError(
                f"non-positive volume weight at node {node}", node=node
            )


def flat_metric(grid: Grid, spd_floor: float = DEFAULT_SPD_FLOOR) -> MetricField:
    m = grid.dim
    coeffs = np.broadcast_to(np.eye(m), grid.shape + (m, m)).copy()
    return MetricField(grid, coeffs, spd_floor=spd_floor)


def inverse_metric_coeffs(coeffs: np.ndarray, spd_floor: float = DEFAULT_SPD_FLOOR,
                          grid: Grid | None = None) -> np.ndarray:
    dets = np.linalg.det(coeffs)
    if np.any(dets <= 0.0) or np.any(np.linalg.eigvalsh(coeffs)[..., 0] < spd_floor):
        bad = np.linalg.eigvalsh(coeffs)[..., 0]
        node = np.unravel_index(np.argmin(bad), bad.shape)
        raise DegenerateMetricError(f"degenerate metric at node {node}", node=node)
    return np.linalg.inv(coeffs)


def inverse_metric(g: MetricField) -> MixedTensorField:
    """Node-wise inverse g^{-1}; exact up to roundoff, SPD at every node.

    Returned as raw contravariant coefficient arrays wrapped in a
    MixedTensorField container (the index placement is tracked by usage).
    """
    inv = inverse_metric_coeffs(g.coeffs, g.spd_floor, g.grid)
    return MixedTensorField(g.grid, 0.5 * (inv + np.swapaxes(inv, -1, -2)))


def volume_form(g: MetricField) -> VolumeField:
    """Riemannian volume weight sqrt(det g_ij) per node."""
    dets = np.linalg.det(g.coeffs)
    if np.any(dets <= 0.0):
        node = np.unravel_index(np.argmin(dets), g.grid.shape)
        raise DegenerateMetricError(f"non-positive det(g) at node {node}", node=node)
    return VolumeField(g.grid, np.sqrt(dets))


def induced_fiber_metric(g: MetricField, bundle: str) -> np.ndarray:
    """Node-wise Gram matrix of the canonical fiber metric, in packed fiber
    coordinates: shape grid.shape + (d, d).

    Tensor-product normalization with no rescaling: trivial -> 1, TM -> g,
    T*M -> g^{-1}, S2T*M -> g02 with g02(h, k) = Tr(g^{-1} h g^{-1} k).
    """
    check_bundle(bundle)
    m = g.m
    if bundle == "trivial":
        return np.ones(g.grid.shape + (1, 1))
    if bundle == "TM":
        return g.coeffs.copy()
    ginv = inverse_metric_coeffs(g.coeffs, g.spd_floor)
    if bundle == "T*M":
        return ginv
    basis = sym_basis(m)
    return np.einsum("...ij,ajk,...kl,bli->...ab", ginv, basis, ginv, basis, optimize=True)


def h0_gram_blocks(g: MetricField, bundle: str) -> np.ndarray:
    """Per-node blocks of the discrete H^0(g) Gram form: fiber Gram times
    sqrt(det g) times the cell measure h^m.  Shape (num_nodes, d, d)."""
    gram = induced_fiber_metric(g, bundle)
    vol = volume_form(g).weights
    cell = g.grid.h ** g.grid.dim
    blocks = gram * vol[..., None, None] * cell
    d = fiber_dim(bundle, g.m)
    return blocks.reshape(g.grid.num_nodes, d, d)


def blocks_to_dense(blocks: np.ndarray) -> np.ndarray:
    """Assemble a block-diagonal dense matrix from (N, d, d) blocks."""
    n_nodes, d, _ = blocks.shape
    out = np.zeros((n_nodes * d, n_nodes * d))
    rows = np.arange(n_nodes)[:, None, None] * d + np.arange(d)[None, :, None]
    cols = np.arange(n_nodes)[:, None, None] * d + np.arange(d)[None, None, :]
    out[rows, cols] = blocks
    return out


def h0_gram(g: MetricField, bundle: str) -> np.ndarray:
    """Dense symmetric positive-definite weight W of the discrete H^0(g)
    inner product: <h, k> = flatten(h)^T W flatten(k)."""
    return blocks_to_dense(h0_gram_blocks(g, bundle))


# --- node-wise contractions used by the geodesic equation ---------------------

def mul_11(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Node-wise matrix product of two (..., m, m) coefficient arrays."""
    return np.einsum("...ij,...jk->...ik", a, b)

def trace_g(ginv: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Node-wise scalar Tr(g^{-1} h)."""
    return np.einsum("...ij,...ji->...", ginv, h)

def sandwich(ginv1: np.ndarray, h: np.ndarray, ginv2: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Node-wise scalar Tr(g^{-1} h g^{-1} k)."""
    return np.einsum("...ij,...jk,...kl,...li->...", ginv1, h, ginv2, k, optimize=True)

def sym_product(h: np.ndarray, ginv: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Node-wise symmetric product (h g^{-1} k + k g^{-1} h)/2."""
    hk = np.einsum("...ij,...jk,...kl->...il", h, ginv, k, optimize=True)
    return 0.5 * (hk + np.swapaxes(hk, -1, -2))
