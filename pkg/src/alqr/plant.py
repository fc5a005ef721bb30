"""Ground-truth linear-Gaussian plant with deterministic seeded noise.

The plant is x_{k+1} = A x_k + B u_k + w_k starting from x_1 = 0, with
w_k ~ N(0, W). Noise is produced by a counter-based generator addressed by
(seed, step, lane), so any step of any trial can be regenerated bit-for-bit
without replaying the stream, and parallel trials never share generator
state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .control_math import CostWeights, SystemMatrices, spectral_radius, _check_spd, _clean_matrix
from .errors import DivergedState, UnstableMatrix

# simulation aborts once the state norm passes this guard
STATE_NORM_GUARD = 1e12

_CHUNK = 4096
_LANES = {"w": 0, "v": 1}


@dataclass(frozen=True)
class PlantSpec:
    """True system, noise covariance, and stage-cost weights for one plant.

    Requires an open-loop stable A (spectral radius < 1) and W > 0.
    """

    sys: SystemMatrices
    W: np.ndarray
    cost: CostWeights

    def __post_init__(self):
        W = _check_spd(_clean_matrix(self.W, "W"), "W")
        if W.shape[0] != self.sys.n:
            raise ValueError(f"W is {W.shape} but the system has n={self.sys.n}")
        if self.cost.Q.shape[0] != self.sys.n:
            raise ValueError(
                f"Q is {self.cost.Q.shape} but the system has n={self.sys.n}")
        if self.cost.R.shape[0] != self.sys.m:
            raise ValueError(
                f"R is {self.cost.R.shape} but the system has m={self.sys.m}")
        sr = spectral_radius(self.sys.A)
        if sr >= 1.0:
            raise UnstableMatrix(
                f"open-loop spectral radius {sr:.6f} >= 1", spectral_radius=sr)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "_chol_W", np.linalg.cholesky(W))
        object.__setattr__(self, "_w_is_identity",
                           bool(np.array_equal(W, np.eye(self.sys.n))))

    @property
    def n(self) -> int:
        return self.sys.n

    @property
    def m(self) -> int:
        return self.sys.m

    @property
    def chol_W(self) -> np.ndarray:
        """Lower Cholesky factor of W, computed once at construction."""
        return self._chol_W


@dataclass
class PlantState:
    """Step index (1-based) and current state vector."""

    k: int
    x: np.ndarray

    @staticmethod
    def initial(n: int) -> "PlantState":
        return PlantState(k=1, x=np.zeros(n))


class NoiseStream:
    """Counter-addressable standard-normal source with two independent lanes.

    Lane "w" serves state-noise draws of dimension n, lane "v" serves probe
    draws of dimension m. The value at (seed, step k, lane) is a pure
    function of those three coordinates: draws are generated in fixed-size
    chunks by a counter-mode bit generator whose key encodes (seed, lane)
    and whose counter encodes the chunk index, so access at any step is
    O(1) amortized and identical no matter what was drawn before.

    ``counter`` is the current step position (1-based); ``advance`` moves it
    forward. Reading does not advance.
    """

    def __init__(self, seed: int, state_dim: int, input_dim: int):
        if state_dim < 1 or input_dim < 1:
            raise ValueError("dimensions must be >= 1")
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.counter = 1
        self._dims = {"w": state_dim, "v": input_dim}
        # per lane: (chunk_index, chunk_array)
        self._cache: dict[str, tuple[int, np.ndarray]] = {}

    def _chunk(self, lane: str, chunk_index: int) -> np.ndarray:
        cached = self._cache.get(lane)
        if cached is not None and cached[0] == chunk_index:
            return cached[1]
        key = (self.seed << 1) | _LANES[lane]
        bitgen = np.random.Philox(key=key, counter=chunk_index << 64)
        arr = np.random.Generator(bitgen).standard_normal(
            (_CHUNK, self._dims[lane]))
        self._cache[lane] = (chunk_index, arr)
        return arr

    def lane_row(self, lane: str, k: int) -> np.ndarray:
        """Standard-normal vector for step k (1-based) on the given lane."""
        if lane not in _LANES:
            raise ValueError(f"unknown lane {lane!r}")
        if k < 1:
            raise ValueError("step index is 1-based")
        i = k - 1
        return self._chunk(lane, i // _CHUNK)[i % _CHUNK]

    def block(self, lane: str, start_k: int, count: int) -> np.ndarray:
        """Rows for steps start_k .. start_k+count-1 as a (count, dim) array."""
        out = np.empty((count, self._dims[lane]))
        filled = 0
        while filled < count:
            i = start_k - 1 + filled
            chunk = self._chunk(lane, i // _CHUNK)
            offset = i % _CHUNK
            take = min(_CHUNK - offset, count - filled)
            out[filled:filled + take] = chunk[offset:offset + take]
            filled += take
        return out

    def advance(self, steps: int = 1) -> None:
        self.counter += steps


def draw_process_noise(stream: NoiseStream, W, chol=None) -> np.ndarray:
    """State noise L g at the stream's current step, where L L' = W.

    Pass a precomputed Cholesky factor as ``chol`` to skip refactorizing W
    on every call; otherwise it is computed here.
    """
    g = stream.lane_row("w", stream.counter)
    L = np.linalg.cholesky(np.asarray(W, dtype=float)) if chol is None else chol
    return L @ g


def draw_probe_noise(stream: NoiseStream, m: int) -> np.ndarray:
    """Standard-normal probe vector at the stream's current step."""
    g = stream.lane_row("v", stream.counter)
    if g.shape[0] != m:
        raise ValueError(f"stream provisions {g.shape[0]} probe dims, asked {m}")
    return g


def step(state: PlantState, u, w, spec: PlantSpec) -> PlantState:
    """One transition x' = A x + B u + w; pure in all arguments."""
    x_next = spec.sys.A @ state.x + spec.sys.B @ np.asarray(u, dtype=float) \
        + np.asarray(w, dtype=float)
    norm = float(np.linalg.norm(x_next))
    if not np.isfinite(norm) or norm > STATE_NORM_GUARD:
        raise DivergedState(
            f"state norm {norm:.3e} passed the overflow guard at step {state.k}",
            step=state.k, norm=norm)
    return PlantState(k=state.k + 1, x=x_next)


def plant_spec_to_dict(spec: PlantSpec) -> dict:
    """Row-major JSON-ready form with keys A, B, W, Q, R."""
    return {
        "A": spec.sys.A.tolist(),
        "B": spec.sys.B.tolist(),
        "W": spec.W.tolist(),
        "Q": spec.cost.Q.tolist(),
        "R": spec.cost.R.tolist(),
    }


def plant_spec_from_dict(doc: dict) -> PlantSpec:
    missing = [key for key in ("A", "B", "W", "Q", "R") if key not in doc]
    if missing:
        raise ValueError(f"plant matrices missing: {', '.join(missing)}")
    sys = SystemMatrices(A=np.array(doc["A"], dtype=float),
                         B=np.array(doc["B"], dtype=float))
    cost = CostWeights(Q=np.array(doc["Q"], dtype=float),
                       R=np.array(doc["R"], dtype=float))
    return PlantSpec(sys=sys, W=np.array(doc["W"], dtype=float), cost=cost)
