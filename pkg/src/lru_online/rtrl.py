"""Real-time recurrent learning for LRU stacks.

Each layer keeps eligibility traces: the total derivative of its hidden
state w.r.t. its own recurrent-path parameters. Because the recurrence is
diagonal, dh_t/dh_{t-1} = diag(lambda) and every trace update is an
elementwise multiply-add; total trace memory is Theta(n*m + n) per layer,
independent of stream length.

Gradient extraction convention: for a real parameter with complex trace
z = dh/dtheta, the loss gradient is Re[a * z] where a = C^T dL/dy is the
complex adjoint coefficient of the hidden state (the loss is real, taken
through y = Re[C h] + D u).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolationError
from .lru import LruLayerParams, LruNetwork, derive_gamma, derive_lambda

Tree = list  # list[dict[str, np.ndarray]] of real gradient blocks


@dataclass
class EligibilityTrace:
    """Per-layer complex traces dh_j/dtheta for the recurrent-path blocks.

    C and D never need traces: they act on the state instantaneously.
    """
    trace_nu: np.ndarray       # (n,)
    trace_phase: np.ndarray    # (n,)
    trace_gamma: np.ndarray    # (n,)
    trace_b_re: np.ndarray     # (n, m)
    trace_b_im: np.ndarray     # (n, m)

    @classmethod
    def zeros(cls, n: int, m: int) -> "EligibilityTrace":
        return cls(
            trace_nu=np.zeros(n, dtype=np.complex128),
            trace_phase=np.zeros(n, dtype=np.complex128),
            trace_gamma=np.zeros(n, dtype=np.complex128),
            trace_b_re=np.zeros((n, m), dtype=np.complex128),
            trace_b_im=np.zeros((n, m), dtype=np.complex128),
        )


def reset_trace(net: LruNetwork) -> list[EligibilityTrace]:
    """All-zero traces shaped for the network (nothing has influenced the
    zero initial state)."""
    return [EligibilityTrace.zeros(layer.n, layer.m) for layer in net.layers]


def trace_step(params: LruLayerParams, h_prev: np.ndarray, u_t: np.ndarray,
               trace_prev: EligibilityTrace) -> EligibilityTrace:
    """Advance one layer's traces: J_t = lambda * J_{t-1} + immediate Jacobian."""
    u_t = np.asarray(u_t, dtype=np.float64)
    if trace_prev.trace_b_re.shape != (params.n, params.m):
        raise ContractViolationError(
            f"trace shape {trace_prev.trace_b_re.shape} does not match "
            f"layer ({params.n}, {params.m})")
    if u_t.shape[-1] != params.m:
        raise ContractViolationError(
            f"input width {u_t.shape[-1]} != layer input width {params.m}")
    lam = derive_lambda(params)
    gamma = derive_gamma(params)
    bu = u_t @ (params.b_re.T + 1j * params.b_im.T)
    dlam_dnu = -np.exp(params.nu) * lam
    dlam_dphase = 1j * np.exp(params.theta_phase) * lam
    return EligibilityTrace(
        trace_nu=lam * trace_prev.trace_nu + dlam_dnu * h_prev,
        trace_phase=lam * trace_prev.trace_phase + dlam_dphase * h_prev,
        trace_gamma=lam * trace_prev.trace_gamma + gamma * bu,
        trace_b_re=lam[:, None] * trace_prev.trace_b_re + gamma[:, None] * u_t[None, :],
        trace_b_im=(lam[:, None] * trace_prev.trace_b_im
                    + 1j * gamma[:, None] * u_t[None, :]),
    )


def online_gradient(net: LruNetwork, traces: list[EligibilityTrace],
                    h_states: list[np.ndarray], layer_inputs: list[np.ndarray],
                    dL_dy: np.ndarray) -> Tree:
    """Convert a per-step output gradient into a full parameter gradient.

    h_states are the post-step hidden states, layer_inputs the per-layer
    inputs at this step (from lru.network_step). Credit flows spatially
    through upper layers' instantaneous maps; temporal credit within each
    layer comes from its own traces. Exact for depth 1; the cross-layer
    temporal terms of deeper stacks are deliberately dropped (the standard
    efficient diagonal-RTRL approximation).
    """
    if len(traces) != net.depth:
        raise ContractViolationError(
            f"got {len(traces)} traces for a depth-{net.depth} network")
    if len(h_states) != net.depth or len(layer_inputs) != net.depth:
        raise ContractViolationError("states/inputs count does not match depth")
    grads: Tree = [None] * net.depth
    g = np.asarray(dL_dy, dtype=np.float64)
    for k in range(net.depth - 1, -1, -1):
        layer = net.layers[k]
        tr = traces[k]
        h = h_states[k]
        u = np.asarray(layer_inputs[k], dtype=np.float64)
        gamma = derive_gamma(layer)
        Cc = layer.c_re + 1j * layer.c_im
        Bc = layer.b_re + 1j * layer.b_im
        a = Cc.T @ g                       # complex adjoint coefficient of h
        grads[k] = {
            "nu": np.real(a * tr.trace_nu),
            "theta_phase": np.real(a * tr.trace_phase),
            "gamma_log": np.real(a * tr.trace_gamma),
            "b_re": np.real(a[:, None] * tr.trace_b_re),
            "b_im": np.real(a[:, None] * tr.trace_b_im),
            "c_re": np.outer(g, h.real),
            "c_im": np.outer(g, -h.imag),
            "d": np.outer(g, u),
        }
        if k > 0:
            # instantaneous dL/du of this layer = input gradient for layer below
            g = np.real(Bc.T @ (gamma * a)) + layer.d.T @ g
    return grads


def window_gradient(net: LruNetwork, inputs: np.ndarray, targets: np.ndarray,
                    delta: float = 1.0) -> tuple[float, Tree]:
    """Run RTRL over one window from zero state/traces, accumulating the
    per-step gradients. Returns the mean per-step Huber loss and its
    gradient, normalized like bptt_gradient so the two can be compared
    directly (they agree exactly for depth-1 networks)."""
    from .lru import network_step
    from .optim import huber, huber_grad, tree_add, tree_scale, tree_zeros_like

    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    T = inputs.shape[0]
    states = net.zero_states()
    traces = reset_trace(net)
    total_loss = 0.0
    grads = tree_zeros_like(net.parameters())
    for t in range(T):
        new_states, y_hat, layer_inputs = network_step(net, states, inputs[t])
        traces = step_traces(net, states, layer_inputs, traces)
        resid = y_hat - targets[t]
        total_loss += huber(resid, delta)
        g = online_gradient(net, traces, new_states, layer_inputs,
                            huber_grad(resid, delta))
        grads = tree_add(grads, g)
        states = new_states
    return total_loss / T, tree_scale(grads, 1.0 / T)


def step_traces(net: LruNetwork, states: list[np.ndarray],
                layer_inputs: list[np.ndarray],
                traces: list[EligibilityTrace]) -> list[EligibilityTrace]:
    """Advance all layers' traces for one step. `states` are the pre-step
    hidden states, `layer_inputs` the inputs each layer saw this step."""
    return [trace_step(layer, h_prev, u, tr)
            for layer, h_prev, u, tr
            in zip(net.layers, states, layer_inputs, traces)]
