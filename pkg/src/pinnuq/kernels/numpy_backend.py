"""Pure-numpy batched network/derivative kernel (fallback engine).

Computes, for a fixed batch of evaluation points, the network output and
its per-axis first and second input derivatives (Taylor-mode propagation
through each layer), and backpropagates adjoint seeds on those outputs to
a gradient with respect to the flat parameter vector.

The compiled engine in ``_core`` implements the identical contract; both
are cross-checked in the test suite.
"""

from __future__ import annotations

import numpy as np

from ..mlp import MlpSpec, unflatten


class NumpyMlpKernel:
    """Batched evaluation of one network at fixed points.

    order 0: values only; order 1: + first derivatives along each axis;
    order 2: + second derivatives along each axis (no mixed terms).
    ``backward`` must follow a ``forward`` on the same kernel instance and
    is not reentrant; give each worker its own kernel.
    """

    name = "numpy"

    def __init__(self, spec: MlpSpec, points, order: int):
        if order not in (0, 1, 2):
            raise ValueError(f"order must be 0, 1 or 2, got {order!r}")
        if spec.output_dim != 1:
            raise ValueError("kernels support scalar-output networks only")
        self.spec = spec
        self.order = order
        self.points = np.ascontiguousarray(points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != spec.input_dim:
            raise ValueError(
                f"points shape {self.points.shape} incompatible with "
                f"input_dim {spec.input_dim}"
            )
        self.n_points = self.points.shape[0]
        self.n_params = spec.n_params
        self._state = None

    # -- forward ---------------------------------------------------------

    def forward(self, params):
        """Returns (value, d1, d2); d1/d2 are None below the kernel order.

        value: (n,), d1: (n, d), d2: (n, d) with d2[:, k] = ∂²u/∂x_k².
        """
        vec = np.asarray(params, dtype=np.float64)
        layers = unflatten(self.spec, vec)
        d = self.spec.input_dim
        n = self.n_points
        order = self.order

        Z = self.points
        D1 = [np.eye(d)[k][None, :].repeat(n, axis=0) for k in range(d)] if order >= 1 else None
        D2 = [np.zeros((n, d)) for _ in range(d)] if order >= 2 else None

        # stash per layer what backward needs
        zs, d1s, d2s, ts, ss, a1s, a2s = [], [], [], [], [], [], []
        n_layers = len(layers)
        for li, (W, b) in enumerate(layers):
            zs.append(Z)
            d1s.append(D1)
            d2s.append(D2)
            A = Z @ W.T + b
            A1 = [D1[k] @ W.T for k in range(d)] if order >= 1 else None
            A2 = [D2[k] @ W.T for k in range(d)] if order >= 2 else None
            if li < n_layers - 1:
                T = np.tanh(A)
                S = 1.0 - T * T
                ts.append(T)
                ss.append(S)
                a1s.append(A1)
                a2s.append(A2)
                Z = T
                D1 = [S * A1[k] for k in range(d)] if order >= 1 else None
                D2 = (
                    [S * A2[k] - 2.0 * T * S * A1[k] ** 2 for k in range(d)]
                    if order >= 2
                    else None
                )
            else:
                Z, D1, D2 = A, A1, A2

        self._state = (layers, zs, d1s, d2s, ts, ss, a1s, a2s)
        value = Z[:, 0]
        d1 = np.stack([D1[k][:, 0] for k in range(d)], axis=1) if order >= 1 else None
        d2 = np.stack([D2[k][:, 0] for k in range(d)], axis=1) if order >= 2 else None
        return value, d1, d2

    # -- backward ----------------------------------------------------------

    def backward(self, g_value, g_d1=None, g_d2=None):
        """Gradient of sum_i [gv_i*u_i + sum_k (g1_ik*du_ik + g2_ik*d2u_ik)]
        with respect to the flat parameters of the last forward call."""
        if self._state is None:
            raise RuntimeError("backward called before forward")
        layers, zs, d1s, d2s, ts, ss, a1s, a2s = self._state
        d = self.spec.input_dim
        n = self.n_points
        order = self.order

        GZ = np.asarray(g_value, dtype=np.float64).reshape(n, 1)
        if order >= 1:
            if g_d1 is None:
                g_d1 = np.zeros((n, d))
            GD1 = [np.ascontiguousarray(g_d1[:, k]).reshape(n, 1) for k in range(d)]
        if order >= 2:
            if g_d2 is None:
                g_d2 = np.zeros((n, d))
            GD2 = [np.ascontiguousarray(g_d2[:, k]).reshape(n, 1) for k in range(d)]

        grads = []
        n_layers = len(layers)
        for li in range(n_layers - 1, -1, -1):
            W, _b = layers[li]
            if li < n_layers - 1:
                T, S, A1 = ts[li], ss[li], a1s[li]
                GT = GZ.copy()
                GS = np.zeros_like(GT)
                if order >= 1:
                    GA1 = [GD1[k] * S for k in range(d)]
                    for k in range(d):
                        GS += GD1[k] * A1[k]
                if order >= 2:
                    A2 = a2s[li]
                    GA2 = [GD2[k] * S for k in range(d)]
                    for k in range(d):
                        GS += GD2[k] * (A2[k] - 2.0 * T * A1[k] ** 2)
                        GT += GD2[k] * (-2.0 * S) * A1[k] ** 2
                        GA1[k] += GD2[k] * (-4.0 * T * S) * A1[k]
                GT += -2.0 * T * GS
                GA = GT * S
            else:
                GA = GZ
                GA1 = GD1 if order >= 1 else None
                GA2 = GD2 if order >= 2 else None

            Z, D1, D2 = zs[li], d1s[li], d2s[li]
            GW = GA.T @ Z
            Gb = GA.sum(axis=0)
            GZ = GA @ W
            if order >= 1:
                for k in range(d):
                    GW += GA1[k].T @ D1[k]
                GD1 = [GA1[k] @ W for k in range(d)]
            if order >= 2:
                for k in range(d):
                    GW += GA2[k].T @ D2[k]
                GD2 = [GA2[k] @ W for k in range(d)]
            grads.append((GW, Gb))

        flat = np.empty(self.n_params)
        pos = 0
        for GW, Gb in reversed(grads):
            flat[pos : pos + GW.size] = GW.ravel()
            pos += GW.size
            flat[pos : pos + Gb.size] = Gb
            pos += Gb.size
        return flat
