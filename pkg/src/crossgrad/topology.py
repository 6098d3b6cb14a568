"""Communication graphs and their mixing matrices.

Agents average parameters through a doubly stochastic mixing matrix whose
sparsity pattern is the communication graph.  Three standard families are
supported: the complete graph, the undirected ring, and the complete
bipartite graph with Metropolis-Hastings weights.
"""

from dataclasses import dataclass

import numpy as np

TOPOLOGIES = ("full", "ring", "bipartite")


class TopologyError(ValueError):
    """Raised for unknown topology names or invalid agent counts."""


@dataclass(frozen=True)
class MixingMatrix:
    """Doubly stochastic weights over a communication graph.

    weights[i, j] > 0 iff agent i averages agent j's parameters; the
    diagonal is always positive (every agent keeps a share of itself).
    """

    kind: str
    n_agents: int
    weights: np.ndarray


@dataclass(frozen=True)
class SpectralReport:
    eigenvalues: np.ndarray  # sorted descending
    rho_sqrt: float          # max(|lambda_2|, |lambda_n|)


def build_topology(kind: str, n_agents: int) -> MixingMatrix:
    """Construct the mixing matrix for a named topology.

    full: uniform averaging, every weight 1/n.
    ring: cyclic graph, 1/3 on the diagonal and both neighbours (n >= 3).
    bipartite: complete bipartite graph between two halves plus self
    loops, Metropolis-Hastings weights (n even, n >= 2).
    """
    if kind not in TOPOLOGIES:
        raise TopologyError(f"unknown topology {kind!r}, expected one of {TOPOLOGIES}")
    if not isinstance(n_agents, (int, np.integer)) or isinstance(n_agents, bool):
        raise TopologyError(f"n_agents must be an integer, got {n_agents!r}")
    n = int(n_agents)
    if n < 1:
        raise TopologyError(f"n_agents must be positive, got {n}")

    if kind == "full":
        w = np.full((n, n), 1.0 / n)
    elif kind == "ring":
        if n < 3:
            raise TopologyError(f"ring topology needs at least 3 agents, got {n}")
        w = np.zeros((n, n))
        for i in range(n):
            w[i, i] = 1.0 / 3.0
            w[i, (i + 1) % n] = 1.0 / 3.0
            w[i, (i - 1) % n] = 1.0 / 3.0
    else:
        if n < 2 or n % 2 != 0:
            raise TopologyError(f"bipartite topology needs an even agent count, got {n}")
        half = n // 2
        # Every cross edge joins two degree-half vertices, so the
        # Metropolis-Hastings weight is 1/(1 + half) on all of them.
        w = np.zeros((n, n))
        cross = 1.0 / (1.0 + half)
        w[:half, half:] = cross
        w[half:, :half] = cross
        for i in range(n):
            w[i, i] = 1.0 - w[i].sum()

    return MixingMatrix(kind=kind, n_agents=n, weights=w)


def neighbors(mixing: MixingMatrix, agent: int) -> np.ndarray:
    """Indices j != agent with positive weight, in ascending order."""
    if not 0 <= agent < mixing.n_agents:
        raise TopologyError(f"agent index {agent} out of range for n={mixing.n_agents}")
    row = mixing.weights[agent]
    idx = np.flatnonzero(row > 0.0)
    return idx[idx != agent]


def n_links(mixing: MixingMatrix) -> int:
    """Number of directed communication links (off-diagonal nonzeros)."""
    off = mixing.weights.copy()
    np.fill_diagonal(off, 0.0)
    return int(np.count_nonzero(off))


def spectral_report(mixing: MixingMatrix) -> SpectralReport:
    """Eigenvalues of the (symmetric) mixing matrix and the mixing rate.

    rho_sqrt is the second largest eigenvalue magnitude.  Averaging
    contracts the consensus residual by rho_sqrt**2 per round in the
    gossip-only regime, so smaller is faster.
    """
    vals = np.linalg.eigvalsh(mixing.weights)[::-1]
    if mixing.n_agents == 1:
        rho = 0.0
    else:
        rho = float(max(abs(vals[1]), abs(vals[-1])))
    return SpectralReport(eigenvalues=vals, rho_sqrt=rho)
