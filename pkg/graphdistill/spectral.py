"""
Heat Kernel Signature featurization.

A graph is described by the diagonal of its heat kernel
h_z(i, i) = sum_k exp(-lambda_k z) phi_k(i)^2 at T diffusion times, and the
per-time distribution of those values is summarized as a B x T histogram which
is the input image of the network.
"""
from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np

from .errors import ConfigError, SpectralError
from .graph import Graph

EIGENVALUE_FLOOR = -1e-10
CONTRACT_TOLERANCE = 1e-8
HISTOGRAM_TOLERANCE = 1e-9
# HKS values are rounded before binning so that values sitting on a bin edge
# in exact arithmetic (1/n at long diffusion times) bin the same way for
# every node ordering
BIN_DECIMALS = 12


@dataclass(frozen=True)
class HksConfig:
    num_steps: int = 32
    t_min: float = 0.1353352832366127
    t_max: float = 54.598150033144236
    num_bins: int = 32

    def __post_init__(self) -> None:
        if self.num_steps < 2:
            raise ConfigError(f"num_steps must be >= 2, got {self.num_steps}")
        if self.num_bins < 2:
            raise ConfigError(f"num_bins must be >= 2, got {self.num_bins}")
        if not 0 < self.t_min < self.t_max:
            raise ConfigError(
                f"Expected 0 < t_min < t_max, got t_min={self.t_min} t_max={self.t_max}"
            )

    def time_samples(self) -> np.ndarray:
        """Diffusion times, log-spaced from t_min to t_max inclusive"""
        return np.geomspace(self.t_min, self.t_max, self.num_steps)

    def as_dict(self) -> Dict[str, Any]:
        return {
            "num_steps": self.num_steps,
            "t_min": self.t_min,
            "t_max": self.t_max,
            "num_bins": self.num_bins,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "HksConfig":
        try:
            return cls(
                num_steps=int(d["num_steps"]),
                t_min=float(d["t_min"]),
                t_max=float(d["t_max"]),
                num_bins=int(d["num_bins"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"Invalid HKS configuration: {e}")


@dataclass(frozen=True)
class SpectralDecomposition:
    #: ascending eigenvalues
    eigenvalues: np.ndarray
    #: column k is the eigenvector of eigenvalues[k]
    eigenvectors: np.ndarray


def laplacian(g: Graph) -> np.ndarray:
    """L = D - W for the 0/1 adjacency matrix W"""
    adjacency = g.adjacency_matrix()
    return np.diag(adjacency.sum(axis=1)) - adjacency


def eig_sym(m: np.ndarray) -> SpectralDecomposition:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise SpectralError(f"Expected a square matrix, got shape {m.shape}")
    if not np.array_equal(m, m.T):
        worst = float(np.max(np.abs(m - m.T)))
        raise SpectralError(f"Matrix is not symmetric (max asymmetry {worst:.3e})")
    try:
        eigenvalues, eigenvectors = np.linalg.eigh(m)
    except np.linalg.LinAlgError as e:
        raise SpectralError(f"Eigendecomposition did not converge: {e}")

    n = m.shape[0]
    scale = max(1.0, float(np.max(np.abs(m).sum(axis=1)))) if n else 1.0
    orthogonality = float(np.max(np.abs(eigenvectors.T @ eigenvectors - np.eye(n)), initial=0.0))
    if orthogonality > CONTRACT_TOLERANCE:
        raise SpectralError(
            f"Eigenvectors are not orthonormal (worst deviation {orthogonality:.3e})"
        )
    residual = float(np.max(np.abs(m @ eigenvectors - eigenvectors * eigenvalues), initial=0.0))
    if residual > CONTRACT_TOLERANCE * scale:
        raise SpectralError(f"Eigen residual too large (worst residual {residual:.3e})")
    return SpectralDecomposition(eigenvalues=eigenvalues, eigenvectors=eigenvectors)


def heat_kernel_signature(
    g: Graph, cfg: HksConfig, times: Optional[np.ndarray] = None
) -> np.ndarray:
    """
    Returns the n x T matrix H with H[i, j] = h_{z_j}(i, i).
    ``times`` replaces the configured time samples.
    """
    if g.node_count < 1:
        raise SpectralError("Heat kernel signature of an empty graph")
    decomposition = eig_sym(laplacian(g))
    eigenvalues = decomposition.eigenvalues
    if eigenvalues[0] < EIGENVALUE_FLOOR:
        raise SpectralError(f"Laplacian has a negative eigenvalue {eigenvalues[0]:.3e}")
    eigenvalues = np.where(eigenvalues < 0.0, 0.0, eigenvalues)
    z = cfg.time_samples() if times is None else np.asarray(times, dtype=np.float64)
    decay = np.exp(-np.outer(eigenvalues, z))
    return (decomposition.eigenvectors**2) @ decay


def hks_histogram(h: np.ndarray, cfg: HksConfig) -> np.ndarray:
    """
    Column-wise histogram of the HKS values over B equal bins of [0, 1],
    normalized by the node count. Returns a B x T matrix.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != cfg.num_steps:
        raise SpectralError(
            f"HKS matrix has shape {h.shape}, expected (n, {cfg.num_steps})"
        )
    low, high = float(np.min(h)), float(np.max(h))
    if low < -HISTOGRAM_TOLERANCE or high > 1.0 + HISTOGRAM_TOLERANCE:
        raise SpectralError(f"HKS values outside [0, 1]: min {low!r}, max {high!r}")
    h = np.clip(np.round(h, BIN_DECIMALS), 0.0, 1.0)
    n = h.shape[0]
    histogram = np.empty((cfg.num_bins, cfg.num_steps), dtype=np.float64)
    for j in range(cfg.num_steps):
        # numpy closes the last bin on the right, so 1.0 lands in the top bin
        counts, _ = np.histogram(h[:, j], bins=cfg.num_bins, range=(0.0, 1.0))
        histogram[:, j] = counts / n
    return histogram


def featurize(g: Graph, cfg: HksConfig) -> np.ndarray:
    return hks_histogram(heat_kernel_signature(g, cfg), cfg)
