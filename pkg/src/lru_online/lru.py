"""Diagonal complex linear recurrent layers (LRU).

The recurrence per layer is

    h_t = lambda * h_{t-1} + gamma * (B u_t)
    y_t = Re[C h_t] + D u_t

with lambda_j = exp(-exp(nu_j)) * exp(i * exp(theta_phase_j)), so every
eigenvalue magnitude is inside the unit circle by construction, and
gamma_j = exp(gamma_log_j) a trainable per-node input normalization.

Hidden states are numpy complex128 arrays; the trainable parameters are
kept as split real arrays (nu, theta_phase, gamma_log, b_re, b_im, c_re,
c_im, d) because the optimizer operates on a real parameter vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractViolationError

# Canonical ordering of the real parameter blocks of one layer.
PARAM_BLOCKS = ("nu", "theta_phase", "gamma_log",
                "b_re", "b_im", "c_re", "c_im", "d")


@dataclass
class LruLayerParams:
    """Real parameter blocks of a single LRU layer (n nodes, m inputs, p outputs)."""

    nu: np.ndarray            # (n,)  |lambda_j| = exp(-exp(nu_j))
    theta_phase: np.ndarray   # (n,)  arg(lambda_j) = exp(theta_phase_j)
    gamma_log: np.ndarray     # (n,)  gamma_j = exp(gamma_log_j)
    b_re: np.ndarray          # (n, m)
    b_im: np.ndarray          # (n, m)
    c_re: np.ndarray          # (p, n)
    c_im: np.ndarray          # (p, n)
    d: np.ndarray             # (p, m)

    @property
    def n(self) -> int:
        return self.nu.shape[0]

    @property
    def m(self) -> int:
        return self.b_re.shape[1]

    @property
    def p(self) -> int:
        return self.c_re.shape[0]

    def blocks(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_BLOCKS}

    @classmethod
    def from_blocks(cls, blocks: dict[str, np.ndarray]) -> "LruLayerParams":
        return cls(**{name: np.asarray(blocks[name], dtype=np.float64)
                      for name in PARAM_BLOCKS})

    def copy(self) -> "LruLayerParams":
        return LruLayerParams(**{k: v.copy() for k, v in self.blocks().items()})

    def validate(self) -> None:
        n, m, p = self.n, self.m, self.p
        expect = {"nu": (n,), "theta_phase": (n,), "gamma_log": (n,),
                  "b_re": (n, m), "b_im": (n, m),
                  "c_re": (p, n), "c_im": (p, n), "d": (p, m)}
        for name, shape in expect.items():
            got = getattr(self, name).shape
            if got != shape:
                raise ContractViolationError(
                    f"layer block {name!r} has shape {got}, expected {shape}")


@dataclass
class LruNetwork:
    """Stack of LRU layers; layer k's output feeds layer k+1's input."""

    layers: list[LruLayerParams] = field(default_factory=list)

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].m

    @property
    def output_dim(self) -> int:
        return self.layers[-1].p

    def validate(self) -> None:
        for layer in self.layers:
            layer.validate()
        for k in range(len(self.layers) - 1):
            if self.layers[k].p != self.layers[k + 1].m:
                raise ContractViolationError(
                    f"layer {k} output width {self.layers[k].p} != "
                    f"layer {k + 1} input width {self.layers[k + 1].m}")

    def copy(self) -> "LruNetwork":
        return LruNetwork([layer.copy() for layer in self.layers])

    def parameters(self) -> list[dict[str, np.ndarray]]:
        return [layer.blocks() for layer in self.layers]

    @classmethod
    def from_parameters(cls, params: list[dict[str, np.ndarray]]) -> "LruNetwork":
        return cls([LruLayerParams.from_blocks(b) for b in params])

    def zero_states(self, batch: int | None = None) -> list[np.ndarray]:
        if batch is None:
            return [np.zeros(layer.n, dtype=np.complex128) for layer in self.layers]
        return [np.zeros((batch, layer.n), dtype=np.complex128) for layer in self.layers]


def derive_lambda(params: LruLayerParams) -> np.ndarray:
    """Complex eigenvalues lambda_j; |lambda_j| < 1 for all finite nu_j."""
    mag = np.exp(-np.exp(params.nu))
    phase = np.exp(params.theta_phase)
    return mag * (np.cos(phase) + 1j * np.sin(phase))


def derive_gamma(params: LruLayerParams) -> np.ndarray:
    return np.exp(params.gamma_log)


def init_layer(m: int, n: int, p: int, r_min: float = 0.9, r_max: float = 0.999,
               max_phase: float = np.pi / 10, seed: int = 0) -> LruLayerParams:
    """Random init: |lambda| uniform on the ring [r_min, r_max] (by area),
    phase uniform in [0, max_phase], gamma = sqrt(1 - |lambda|^2),
    B, C gaussian with 1/sqrt(fan_in) scaling, D zero.
    """
    if not (0.0 < r_min <= r_max < 1.0):
        raise ConfigurationError(
            f"invalid eigenvalue ring [{r_min}, {r_max}]; need 0 < r_min <= r_max < 1")
    rng = np.random.default_rng(seed)
    u = rng.random(n)
    r2 = u * (r_max ** 2 - r_min ** 2) + r_min ** 2
    # invert |lambda| = exp(-exp(nu)):  nu = log(-log|lambda|) = log(-0.5*log r2)
    nu = np.log(-0.5 * np.log(r2))
    phase = rng.random(n) * max_phase
    # phases of exactly zero cannot be log-parameterized; nudge away from 0
    phase = np.maximum(phase, 1e-8)
    theta_phase = np.log(phase)
    gamma_log = 0.5 * np.log(1.0 - r2)
    b_re = rng.standard_normal((n, m)) / np.sqrt(m)
    b_im = rng.standard_normal((n, m)) / np.sqrt(m)
    c_re = rng.standard_normal((p, n)) / np.sqrt(n)
    c_im = rng.standard_normal((p, n)) / np.sqrt(n)
    d = np.zeros((p, m))
    return LruLayerParams(nu, theta_phase, gamma_log, b_re, b_im, c_re, c_im, d)


def init_network(input_dim: int, layer_widths: tuple[int, ...], output_dim: int,
                 r_min: float = 0.9, r_max: float = 0.999, seed: int = 0) -> LruNetwork:
    """Stack of layers with widths `layer_widths`; each hidden layer maps its
    input to a real vector of the same width, the last layer maps to output_dim."""
    layers = []
    m = input_dim
    for k, n in enumerate(layer_widths):
        p = output_dim if k == len(layer_widths) - 1 else n
        layers.append(init_layer(m, n, p, r_min, r_max, seed=seed + 1000 * k))
        m = p
    net = LruNetwork(layers)
    net.validate()
    return net


def layer_step(params: LruLayerParams, h_prev: np.ndarray,
               u_t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One recurrence step. h_prev complex (..., n), u_t real (..., m).
    Returns (h_t, y_t); y_t reflects u_t (the state has already absorbed it)."""
    u_t = np.asarray(u_t, dtype=np.float64)
    if u_t.shape[-1] != params.m:
        raise ContractViolationError(
            f"input width {u_t.shape[-1]} != layer input width {params.m}")
    if h_prev.shape[-1] != params.n:
        raise ContractViolationError(
            f"state width {h_prev.shape[-1]} != layer width {params.n}")
    lam = derive_lambda(params)
    gamma = derive_gamma(params)
    bu = u_t @ (params.b_re.T + 1j * params.b_im.T)
    h_t = lam * h_prev + gamma * bu
    y_t = h_t.real @ params.c_re.T - h_t.imag @ params.c_im.T + u_t @ params.d.T
    return h_t, y_t


def scan_forward(params: LruLayerParams, h_0: np.ndarray,
                 u_seq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Full-sequence forward via an associative parallel scan.

    u_seq real (..., T, m), h_0 complex (..., n). Returns (h_seq, y_seq) with
    shapes (..., T, n) and (..., T, p), identical to T repeated layer_step
    calls. The scan composes elements (a, b) -> h = a * h_prefix + b under
    (a2, b2) o (a1, b1) = (a1*a2, a2*b1 + b2), giving log-depth evaluation.
    """
    u_seq = np.asarray(u_seq, dtype=np.float64)
    if u_seq.ndim < 2 or u_seq.shape[-2] < 1:
        raise ContractViolationError("scan_forward requires a sequence of length >= 1")
    T = u_seq.shape[-2]
    lam = derive_lambda(params)
    gamma = derive_gamma(params)
    bu = u_seq @ (params.b_re.T + 1j * params.b_im.T)      # (..., T, n)
    b = gamma * bu
    a = np.broadcast_to(lam, b.shape).astype(np.complex128).copy()
    stride = 1
    while stride < T:
        # vectorized Hillis-Steele; RHS temporaries make the in-place safe
        hi = (Ellipsis, slice(stride, None), slice(None))
        lo = (Ellipsis, slice(None, -stride), slice(None))
        b[hi] = a[hi] * b[lo] + b[hi]
        a[hi] = a[hi] * a[lo]
        stride *= 2
    h_seq = b + a * np.asarray(h_0, dtype=np.complex128)[..., None, :]
    y_seq = (h_seq.real @ params.c_re.T - h_seq.imag @ params.c_im.T
             + u_seq @ params.d.T)
    return h_seq, y_seq


def network_forward(net: LruNetwork, states: list[np.ndarray],
                    u_t: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """One timestep through the stack; layer k's output feeds layer k+1
    within the same step. Returns (new states, prediction)."""
    new_states, y, _ = network_step(net, states, u_t)
    return new_states, y


def network_step(net: LruNetwork, states: list[np.ndarray], u_t: np.ndarray
                 ) -> tuple[list[np.ndarray], np.ndarray, list[np.ndarray]]:
    """Like network_forward but also returns each layer's input at this step
    (needed for eligibility-trace updates)."""
    if len(states) != net.depth:
        raise ContractViolationError(
            f"got {len(states)} states for a depth-{net.depth} network")
    new_states = []
    layer_inputs = []
    x = np.asarray(u_t, dtype=np.float64)
    for layer, h_prev in zip(net.layers, states):
        layer_inputs.append(x)
        h, x = layer_step(layer, h_prev, x)
        new_states.append(h)
    return new_states, x, layer_inputs


def network_scan(net: LruNetwork, u_seq: np.ndarray,
                 states: list[np.ndarray] | None = None
                 ) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray]:
    """Full-sequence forward through the stack via per-layer scans.

    Returns (per-layer input sequences, per-layer state sequences, predictions).
    """
    u_seq = np.asarray(u_seq, dtype=np.float64)
    if states is None:
        lead = u_seq.shape[:-2]
        states = [np.zeros(lead + (layer.n,), dtype=np.complex128)
                  for layer in net.layers]
    layer_inputs = []
    layer_states = []
    x = u_seq
    for layer, h0 in zip(net.layers, states):
        layer_inputs.append(x)
        h_seq, x = scan_forward(layer, h0, x)
        layer_states.append(h_seq)
    return layer_inputs, layer_states, x
