# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled batched network/derivative kernel (fast engine).

Same contract as ``numpy_backend.NumpyMlpKernel``: Taylor-mode forward pass
(value + per-axis first/second input derivatives) over a batch of fixed
points, and reverse-mode accumulation of parameter gradients from adjoint
seeds on those outputs.

All per-layer buffers live in flat arenas with offsets computed once at
construction, and matrix products go through BLAS dgemm, so the per-call
Python overhead stays negligible.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport tanh as ctanh
from libc.string cimport memcpy, memset
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

ENGINE = "compiled"


cdef void _mm(bint ta, double alpha, double* A, int am, int ak, double* B,
              int bn, double beta, double* C) noexcept nogil:
    # Row-major product C = alpha * op(A) @ B + beta * C where
    #   ta=0: op(A) = A   with A stored (am, ak), B (ak, bn), C (am, bn)
    #   ta=1: op(A) = A^T with A stored (am, ak), B (am, bn), C (ak, bn)
    # Column-major BLAS sees row-major X as X^T, so compute C^T = B^T op(A)^T
    # by swapping operands.
    cdef int m = bn
    cdef int n = ak if ta else am
    cdef int k = am if ta else ak
    cdef int lda = ak
    cdef char tn = 78  # 'N'
    cdef char tb = 84 if ta else 78  # 'T' / 'N'
    cdef double al = alpha, be = beta
    if m == 0 or n == 0 or k == 0:
        return
    dgemm(&tn, &tb, &m, &n, &k, &al, B, &m, A, &lda, &be, C, &m)


cdef class CompiledMlpKernel:
    """Drop-in compiled twin of the numpy kernel (see numpy_backend)."""

    cdef public object spec
    cdef public int order, n_points, n_params
    cdef int d, L, n
    cdef object points_arr
    cdef double[:, ::1] X
    cdef int[::1] fis, fos
    # parameter scratch: per-layer W, W^T, b
    cdef double[::1] wbuf
    cdef Py_ssize_t[::1] offW, offWT, offB
    # forward arena: pre-activation channels A/AD1/AD2, post-activation
    # value T, sech^2 S, derivative channels DO1/DO2 (hidden layers)
    cdef double[::1] fbuf
    cdef Py_ssize_t[::1] offA, offAD1, offAD2, offZO, offSO, offDO1, offDO2
    # backward arena: adjoints; GZ/GD1/GD2 are input-sized
    cdef double[::1] gbuf
    cdef Py_ssize_t[::1] offGA, offGS, offGAD1, offGAD2, offGZ, offGD1, offGD2
    cdef bint _have_state

    name = "compiled"

    def __init__(self, spec, points, order):
        if order not in (0, 1, 2):
            raise ValueError(f"order must be 0, 1 or 2, got {order!r}")
        if spec.output_dim != 1:
            raise ValueError("kernels support scalar-output networks only")
        self.spec = spec
        self.order = int(order)
        # private writable copy: inputs may be read-only views
        self.points_arr = np.array(points, dtype=np.float64, order="C")
        if self.points_arr.ndim != 2 or self.points_arr.shape[1] != spec.input_dim:
            raise ValueError(
                f"points shape {self.points_arr.shape} incompatible with "
                f"input_dim {spec.input_dim}"
            )
        if self.points_arr.shape[0] == 0:
            raise ValueError("kernel needs at least one evaluation point")
        self.X = self.points_arr
        self.n_points = self.points_arr.shape[0]
        self.n = self.n_points
        self.n_params = spec.n_params
        self.d = spec.input_dim
        dims = list(spec.layer_dims())
        self.L = len(dims)
        L, d, n = self.L, self.d, self.n
        use1, use2 = self.order >= 1, self.order >= 2

        self.fis = np.array([fi for fi, _ in dims], dtype=np.int32)
        self.fos = np.array([fo for _, fo in dims], dtype=np.int32)

        offW = np.zeros(L, dtype=np.intp)
        offWT = np.zeros(L, dtype=np.intp)
        offB = np.zeros(L, dtype=np.intp)
        pos = 0
        for l, (fi, fo) in enumerate(dims):
            offW[l] = pos
            pos += fi * fo
            offB[l] = pos
            pos += fo
        for l, (fi, fo) in enumerate(dims):
            offWT[l] = pos
            pos += fi * fo
        self.wbuf = np.zeros(pos)
        self.offW, self.offWT, self.offB = offW, offWT, offB

        cursor = [0]

        def take(count):
            out = cursor[0]
            cursor[0] += count
            return out

        def per_layer(sizes, used=True):
            arr = np.zeros(L, dtype=np.intp)
            for l in range(L):
                arr[l] = take(sizes[l]) if used else 0
            return arr

        def per_layer_axis(sizes, used=True):
            arr = np.zeros(L * d, dtype=np.intp)
            for l in range(L):
                for k in range(d):
                    arr[l * d + k] = take(sizes[l]) if used else 0
            return arr

        out_sz = [n * fo for _, fo in dims]
        in_sz = [n * fi for fi, _ in dims]
        hid_sz = [n * fo if l < L - 1 else 0 for l, (_, fo) in enumerate(dims)]

        self.offA = per_layer(out_sz)
        self.offAD1 = per_layer_axis(out_sz, use1)
        self.offAD2 = per_layer_axis(out_sz, use2)
        self.offZO = per_layer(hid_sz)
        self.offSO = per_layer(hid_sz)
        self.offDO1 = per_layer_axis(hid_sz, use1)
        self.offDO2 = per_layer_axis(hid_sz, use2)
        self.fbuf = np.zeros(max(cursor[0], 1))

        cursor[0] = 0
        self.offGA = per_layer(out_sz)
        self.offGS = per_layer(hid_sz)
        self.offGAD1 = per_layer_axis(out_sz, use1)
        self.offGAD2 = per_layer_axis(out_sz, use2)
        self.offGZ = per_layer(in_sz)
        self.offGD1 = per_layer_axis(in_sz, use1)
        self.offGD2 = per_layer_axis(in_sz, use2)
        self.gbuf = np.zeros(max(cursor[0], 1))
        self._have_state = False

    cdef inline double* _f(self, Py_ssize_t off) noexcept nogil:
        return &self.fbuf[off]

    cdef inline double* _g(self, Py_ssize_t off) noexcept nogil:
        return &self.gbuf[off]

    cdef void _load_params(self, double[::1] vec) noexcept nogil:
        cdef int l, fi, fo, i, o
        cdef Py_ssize_t w0, t0
        memcpy(&self.wbuf[0], &vec[0], self.n_params * sizeof(double))
        for l in range(self.L):
            fi = self.fis[l]
            fo = self.fos[l]
            w0 = self.offW[l]
            t0 = self.offWT[l]
            for o in range(fo):
                for i in range(fi):
                    self.wbuf[t0 + i * fo + o] = self.wbuf[w0 + o * fi + i]

    def forward(self, params):
        """Returns (value, d1, d2); d1/d2 are None below the kernel order."""
        vec = np.array(params, dtype=np.float64)  # writable private copy
        if vec.ndim != 1 or vec.shape[0] != self.n_params:
            raise ValueError(
                f"parameter vector length {vec.shape[0]}, "
                f"kernel needs {self.n_params}"
            )
        cdef double[::1] vview = vec
        self._forward_c(vview)
        self._have_state = True
        cdef int n = self.n, d = self.d, last = self.L - 1
        value = np.empty(n)
        cdef double[::1] vout = value
        cdef Py_ssize_t p
        cdef int k
        cdef double* src = self._f(self.offA[last])
        for p in range(n):
            vout[p] = src[p]
        d1 = d2 = None
        cdef double[:, ::1] d1v, d2v
        if self.order >= 1:
            d1 = np.empty((n, d))
            d1v = d1
            for k in range(d):
                src = self._f(self.offAD1[last * d + k])
                for p in range(n):
                    d1v[p, k] = src[p]
        if self.order >= 2:
            d2 = np.empty((n, d))
            d2v = d2
            for k in range(d):
                src = self._f(self.offAD2[last * d + k])
                for p in range(n):
                    d2v[p, k] = src[p]
        return value, d1, d2

    cdef void _forward_c(self, double[::1] vec) noexcept nogil:
        cdef int n = self.n, d = self.d, order = self.order, L = self.L
        cdef int l, k, fi, fo
        cdef Py_ssize_t p, o
        cdef double* zin
        cdef double* din
        cdef double* A
        cdef double* A1
        cdef double* A2
        cdef double* T
        cdef double* S
        cdef double* WT
        cdef double* b
        cdef double t, a1
        self._load_params(vec)
        for l in range(L):
            fi = self.fis[l]
            fo = self.fos[l]
            WT = &self.wbuf[self.offWT[l]]
            b = &self.wbuf[self.offB[l]]
            A = self._f(self.offA[l])
            zin = &self.X[0, 0] if l == 0 else self._f(self.offZO[l - 1])
            _mm(0, 1.0, zin, n, fi, WT, fo, 0.0, A)
            for p in range(n):
                for o in range(fo):
                    A[p * fo + o] += b[o]
            if order >= 1:
                for k in range(d):
                    A1 = self._f(self.offAD1[l * d + k])
                    if l == 0:
                        # input first-derivative channel is the unit vector e_k
                        for p in range(n):
                            for o in range(fo):
                                A1[p * fo + o] = WT[k * fo + o]
                    else:
                        din = self._f(self.offDO1[(l - 1) * d + k])
                        _mm(0, 1.0, din, n, fi, WT, fo, 0.0, A1)
            if order >= 2:
                for k in range(d):
                    A2 = self._f(self.offAD2[l * d + k])
                    if l == 0:
                        memset(A2, 0, n * fo * sizeof(double))
                    else:
                        din = self._f(self.offDO2[(l - 1) * d + k])
                        _mm(0, 1.0, din, n, fi, WT, fo, 0.0, A2)
            if l < L - 1:
                T = self._f(self.offZO[l])
                S = self._f(self.offSO[l])
                for p in range(n * fo):
                    t = ctanh(A[p])
                    T[p] = t
                    S[p] = 1.0 - t * t
                if order >= 1:
                    for k in range(d):
                        A1 = self._f(self.offAD1[l * d + k])
                        din = self._f(self.offDO1[l * d + k])
                        for p in range(n * fo):
                            din[p] = S[p] * A1[p]
                if order >= 2:
                    for k in range(d):
                        A1 = self._f(self.offAD1[l * d + k])
                        A2 = self._f(self.offAD2[l * d + k])
                        din = self._f(self.offDO2[l * d + k])
                        for p in range(n * fo):
                            a1 = A1[p]
                            din[p] = S[p] * A2[p] - 2.0 * T[p] * S[p] * a1 * a1

    def backward(self, g_value, g_d1=None, g_d2=None):
        """Gradient of sum_i [gv_i*u_i + sum_k (g1_ik*du_ik + g2_ik*d2u_ik)]
        with respect to the flat parameters of the last forward call."""
        if not self._have_state:
            raise RuntimeError("backward called before forward")
        cdef int n = self.n, d = self.d, order = self.order
        gv = np.ascontiguousarray(g_value, dtype=np.float64)
        if gv.shape[0] != n:
            raise ValueError(f"g_value length {gv.shape[0]}, expected {n}")
        if order >= 1:
            g1 = (np.zeros((n, d)) if g_d1 is None
                  else np.ascontiguousarray(g_d1, dtype=np.float64))
        else:
            g1 = np.zeros((1, 1))
        if order >= 2:
            g2 = (np.zeros((n, d)) if g_d2 is None
                  else np.ascontiguousarray(g_d2, dtype=np.float64))
        else:
            g2 = np.zeros((1, 1))
        grad = np.zeros(self.n_params)
        cdef double[::1] gview = grad
        cdef double[::1] gvv = gv
        cdef double[:, ::1] g1v = g1
        cdef double[:, ::1] g2v = g2
        self._backward_c(gvv, g1v, g2v, gview)
        return grad

    cdef void _backward_c(self, double[::1] gv, double[:, ::1] g1,
                          double[:, ::1] g2, double[::1] grad) noexcept nogil:
        cdef int n = self.n, d = self.d, order = self.order, L = self.L
        cdef int l, k, fi, fo
        cdef Py_ssize_t p, o
        cdef double* GA
        cdef double* GS
        cdef double* GA1
        cdef double* GA2
        cdef double* GOut
        cdef double* GDup
        cdef double* T
        cdef double* S
        cdef double* A1
        cdef double* A2
        cdef double* W
        cdef double* zin
        cdef double* din
        cdef double a1, g2c, gt
        cdef int last = L - 1

        # seed output-layer adjoints (output width is 1)
        GA = self._g(self.offGA[last])
        for p in range(n):
            GA[p] = gv[p]
        if order >= 1:
            for k in range(d):
                GA1 = self._g(self.offGAD1[last * d + k])
                for p in range(n):
                    GA1[p] = g1[p, k]
        if order >= 2:
            for k in range(d):
                GA2 = self._g(self.offGAD2[last * d + k])
                for p in range(n):
                    GA2[p] = g2[p, k]

        for l in range(L - 1, -1, -1):
            fi = self.fis[l]
            fo = self.fos[l]
            W = &self.wbuf[self.offW[l]]
            GA = self._g(self.offGA[l])
            if l < last:
                # fold post-activation adjoints into pre-activation ones;
                # GOut is the adjoint of this layer's output value, written
                # when layer l+1 propagated to its inputs
                T = self._f(self.offZO[l])
                S = self._f(self.offSO[l])
                GS = self._g(self.offGS[l])
                GOut = self._g(self.offGZ[l + 1])
                memset(GS, 0, n * fo * sizeof(double))
                if order >= 1:
                    for k in range(d):
                        GDup = self._g(self.offGD1[(l + 1) * d + k])
                        GA1 = self._g(self.offGAD1[l * d + k])
                        A1 = self._f(self.offAD1[l * d + k])
                        for p in range(n * fo):
                            GS[p] += GDup[p] * A1[p]
                            GA1[p] = GDup[p] * S[p]
                if order >= 2:
                    for k in range(d):
                        GDup = self._g(self.offGD2[(l + 1) * d + k])
                        GA1 = self._g(self.offGAD1[l * d + k])
                        GA2 = self._g(self.offGAD2[l * d + k])
                        A1 = self._f(self.offAD1[l * d + k])
                        A2 = self._f(self.offAD2[l * d + k])
                        for p in range(n * fo):
                            a1 = A1[p]
                            g2c = GDup[p]
                            GS[p] += g2c * (A2[p] - 2.0 * T[p] * a1 * a1)
                            GOut[p] += g2c * (-2.0 * S[p]) * a1 * a1
                            GA1[p] += g2c * (-4.0 * T[p] * S[p]) * a1
                            GA2[p] = g2c * S[p]
                for p in range(n * fo):
                    gt = GOut[p] - 2.0 * T[p] * GS[p]
                    GA[p] = gt * S[p]

            # affine part: GW += GA^T @ Zin, Gb += column sums of GA,
            # then propagate adjoints to the layer inputs
            zin = &self.X[0, 0] if l == 0 else self._f(self.offZO[l - 1])
            _mm(1, 1.0, GA, n, fo, zin, fi, 1.0, &grad[self.offW[l]])
            for p in range(n):
                for o in range(fo):
                    grad[self.offB[l] + o] += GA[p * fo + o]
            if l > 0:
                _mm(0, 1.0, GA, n, fo, W, fi, 0.0, self._g(self.offGZ[l]))
            if order >= 1:
                for k in range(d):
                    GA1 = self._g(self.offGAD1[l * d + k])
                    if l == 0:
                        # first-derivative input channel is e_k: only
                        # column k of W receives gradient
                        for p in range(n):
                            for o in range(fo):
                                grad[self.offW[l] + o * fi + k] += GA1[p * fo + o]
                    else:
                        din = self._f(self.offDO1[(l - 1) * d + k])
                        _mm(1, 1.0, GA1, n, fo, din, fi, 1.0, &grad[self.offW[l]])
                        _mm(0, 1.0, GA1, n, fo, W, fi, 0.0,
                            self._g(self.offGD1[l * d + k]))
            if order >= 2:
                for k in range(d):
                    GA2 = self._g(self.offGAD2[l * d + k])
                    if l > 0:
                        # second-derivative input channel is zero at the
                        # input layer: no weight gradient there
                        din = self._f(self.offDO2[(l - 1) * d + k])
                        _mm(1, 1.0, GA2, n, fo, din, fi, 1.0, &grad[self.offW[l]])
                        _mm(0, 1.0, GA2, n, fo, W, fi, 0.0,
                            self._g(self.offGD2[l * d + k]))
