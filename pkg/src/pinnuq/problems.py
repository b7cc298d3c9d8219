"""The three benchmark inverse problems.

* 1D linear Poisson: k u'' = f on [-1, 1] with known k = -1/pi^2 and
  unknown source f and boundary values; the source is additive, so it is
  represented through the state network as f_hat = k * u_hat''.
* 1D non-linear Poisson: lam u'' + k tanh(u) = f on [-0.7, 0.7].
* 2D diffusion: div(exp(y) grad h) = 0 on [0, L1] x [0, L2] with unknown
  log-diffusivity y, Dirichlet head H on the right boundary, prescribed
  inflow flux q on the left, and no-flow top/bottom.  The PDE residual is
  evaluated in the expanded form exp(y) * (lap h + grad y . grad h); the
  compact flux-gradient notation sometimes seen for this residual is a
  vector-valued expression and is not what the governing equation needs.

Also houses the measurement generator, the Gaussian-random-field sampler
for log-diffusivity, and the cell-centered finite-difference reference
solver with harmonic-mean face transmissibilities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .kernels import make_kernel
from .mlp import MlpSpec, ParameterVector, init_params, layout_n_params


class NumericError(RuntimeError):
    """A numerical routine failed to reach its required tolerance."""


# -- datasets -------------------------------------------------------------


@dataclass(frozen=True)
class PointValues:
    """Observation locations (n, d) with one value per location."""

    points: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        v = np.asarray(self.values, dtype=np.float64)
        if p.shape[0] != v.shape[0]:
            raise ValueError("points/values length mismatch")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class Dataset:
    """Measurements and collocation points for one problem instance.

    ``y_obs`` holds source/parameter observations (f or y), ``u_obs``
    state observations (boundary u values for the 1D problems, interior
    h values for the 2D problem), ``dirichlet_obs``/``neumann_obs`` the
    2D boundary measurements, and the remaining fields collocation-only
    point sets.  Counts are recoverable as lengths.
    """

    problem: str
    noise_sigma: float
    seed: int
    y_obs: PointValues | None = None
    u_obs: PointValues | None = None
    dirichlet_obs: PointValues | None = None
    neumann_obs: PointValues | None = None
    residual_points: np.ndarray | None = None
    neumann_top: np.ndarray | None = None
    neumann_bottom: np.ndarray | None = None


def generate_measurements(values, sigma, seed):
    """Reference values plus i.i.d. N(0, sigma^2) noise; deterministic per seed."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    values = np.asarray(values, dtype=np.float64)
    rng = np.random.default_rng(seed)
    return values + rng.normal(0.0, sigma, values.shape) if sigma > 0 else values.copy()


def _child_seeds(seed, n):
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n)]


# -- grid fields and the GRF prior ---------------------------------------


@dataclass
class GridField:
    """Cell-centered scalar field on a uniform nx-by-ny grid.

    ``values[i, j]`` belongs to the cell center
    ((i + 1/2) L1/nx, (j + 1/2) L2/ny); the same ordering is used by the
    GRF sampler and the FD solver.
    """

    nx: int
    ny: int
    extent: tuple[float, float]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.nx, self.ny):
            raise ValueError(
                f"values shape {self.values.shape} != ({self.nx}, {self.ny})"
            )

    @property
    def spacing(self):
        return self.extent[0] / self.nx, self.extent[1] / self.ny

    def cell_centers(self):
        """(nx*ny, 2) array of centers, x-major (index = i*ny + j)."""
        dx, dy = self.spacing
        xs = (np.arange(self.nx) + 0.5) * dx
        ys = (np.arange(self.ny) + 0.5) * dy
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])

    def flat(self):
        return self.values.ravel()

    def save_csv(self, path):
        with open(path, "w") as f:
            f.write(f"{self.nx},{self.ny}\n")
            f.write(f"{self.extent[0]!r},{self.extent[1]!r}\n")
            for i in range(self.nx):
                f.write(",".join(repr(float(v)) for v in self.values[i]) + "\n")

    @staticmethod
    def load_csv(path):
        with open(path) as f:
            nx, ny = (int(v) for v in f.readline().split(","))
            l1, l2 = (float(v) for v in f.readline().split(","))
            values = np.array(
                [[float(v) for v in f.readline().split(",")] for _ in range(nx)]
            )
        return GridField(nx, ny, (l1, l2), values)


@dataclass(frozen=True)
class GrfPrior:
    """Squared-exponential Gaussian-field prior for log-diffusivity."""

    mean: float = -3.0
    variance: float = 0.81
    corr_length: float = 0.5

    def __post_init__(self):
        if self.variance <= 0 or self.corr_length <= 0:
            raise ValueError("variance and corr_length must be > 0")


GRF_CELL_GUARD = 16384


def sample_grf(prior: GrfPrior, nx, ny, extent, seed, max_cells=GRF_CELL_GUARD):
    """One realization of the Gaussian field on the cell-centered grid.

    Dense covariance C(x, x') = var * exp(-|x-x'|^2 / corr_length^2),
    lower-triangular factorization with diagonal jitter starting at 1e-10
    and escalating tenfold up to 1e-6 before giving up.
    """
    n_cells = nx * ny
    if n_cells > max_cells:
        raise ValueError(
            f"grid has {n_cells} cells, above the dense-factorization "
            f"guard {max_cells}"
        )
    grid = GridField(nx, ny, tuple(extent), np.zeros((nx, ny)))
    centers = grid.cell_centers()
    d2 = ((centers[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
    C = prior.variance * np.exp(-d2 / prior.corr_length**2)
    # jitter scales with the variance so degenerate priors stay degenerate
    jitter = 1e-10 * prior.variance
    L = None
    while jitter <= 1e-6 * prior.variance:
        try:
            L = np.linalg.cholesky(C + jitter * np.eye(n_cells))
            break
        except np.linalg.LinAlgError:
            jitter *= 10.0
    if L is None:
        raise NumericError(
            "covariance factorization failed even with jitter escalation"
        )
    xi = np.random.default_rng(seed).standard_normal(n_cells)
    grid.values = (prior.mean + L @ xi).reshape(nx, ny)
    return grid


# -- finite-difference reference solver ----------------------------------


def solve_diffusion_fd(k_field: GridField, H, q):
    """Cell-centered 5-point FD solution of div(k grad h) = 0.

    Dirichlet h = H on the right boundary (ghost half-cell), prescribed
    inflow flux q on the left, no-flow top/bottom.  Face transmissibilities
    use the harmonic mean of the adjacent cell values; the linear system is
    solved directly and verified to a residual 2-norm of 1e-10.
    """
    k = k_field.values
    if np.any(k <= 0):
        raise ValueError("diffusion coefficient must be positive everywhere")
    nx, ny = k_field.nx, k_field.ny
    dx, dy = k_field.spacing

    def idx(i, j):
        return i * ny + j

    n = nx * ny
    rows, cols, vals = [], [], []
    rhs = np.zeros(n)

    def add(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    for i in range(nx):
        for j in range(ny):
            c = idx(i, j)
            diag = 0.0
            if i + 1 < nx:
                kh = 2.0 * k[i, j] * k[i + 1, j] / (k[i, j] + k[i + 1, j])
                T = dy * kh / dx
                add(c, idx(i + 1, j), -T)
                diag += T
            else:
                Tb = dy * k[i, j] / (dx / 2.0)
                diag += Tb
                rhs[c] += Tb * H
            if i - 1 >= 0:
                kh = 2.0 * k[i, j] * k[i - 1, j] / (k[i, j] + k[i - 1, j])
                T = dy * kh / dx
                add(c, idx(i - 1, j), -T)
                diag += T
            else:
                rhs[c] += q * dy  # prescribed inflow across the left face
            if j + 1 < ny:
                kh = 2.0 * k[i, j] * k[i, j + 1] / (k[i, j] + k[i, j + 1])
                T = dx * kh / dy
                add(c, idx(i, j + 1), -T)
                diag += T
            if j - 1 >= 0:
                kh = 2.0 * k[i, j] * k[i, j - 1] / (k[i, j] + k[i, j - 1])
                T = dx * kh / dy
                add(c, idx(i, j - 1), -T)
                diag += T
            add(c, c, diag)

    A = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    h = spla.spsolve(A, rhs)
    res = np.linalg.norm(A @ h - rhs)
    scale = max(np.linalg.norm(rhs), 1.0)
    if res > 1e-10 * scale:
        h, info = spla.cg(A, rhs, x0=h, rtol=1e-14, atol=0.0, maxiter=20 * n)
        res = np.linalg.norm(A @ h - rhs)
        if res > 1e-10 * scale:
            raise NumericError(f"FD solve residual {res:.3e} above tolerance")
    return GridField(nx, ny, k_field.extent, h.reshape(nx, ny))


def fd_flux_balance(k_field: GridField, h_field: GridField, H, q):
    """Net boundary flux (inflow minus outflow); ~0 for a converged solve."""
    k = k_field.values
    h = h_field.values
    _nx, ny = k_field.nx, k_field.ny
    dx, dy = k_field.spacing
    inflow = q * dy * ny
    Tb = dy * k[-1, :] / (dx / 2.0)
    outflow = float(np.sum(Tb * (h[-1, :] - H)))
    return inflow - outflow


# -- reference solutions ---------------------------------------------------


def ref_linear_poisson(x):
    """(u, f) for the linear problem: u = sin(pi x), f = k u'' = sin(pi x)."""
    x = np.asarray(x, dtype=np.float64)
    u = np.sin(np.pi * x)
    return u, u.copy()


NONLINEAR_LAM = 0.01
NONLINEAR_K = 0.7


def ref_nonlinear_poisson(x):
    """(u, f) for the non-linear problem, u = sin(6x)^3."""
    x = np.asarray(x, dtype=np.float64)
    s, c = np.sin(6.0 * x), np.cos(6.0 * x)
    u = s**3
    f = NONLINEAR_LAM * (-108.0 * s**3 + 216.0 * s * c**2) + NONLINEAR_K * np.tanh(u)
    return u, f


# -- problem definitions ---------------------------------------------------


@dataclass(frozen=True)
class LinearPoisson:
    """k u'' = f on [-1, 1]; observed: noisy f at n_f points, noisy u at both ends."""

    k: float = -1.0 / np.pi**2
    domain: tuple[float, float] = (-1.0, 1.0)

    name = "linear_poisson"
    field_names = ("u", "f")
    term_names = ("f", "b")
    data_term = "f"

    def reference(self, x):
        return ref_linear_poisson(x)

    def default_specs(self):
        return (MlpSpec(1, (50, 50)),)

    def make_dataset(self, n_f, sigma, seed) -> Dataset:
        s_f, s_b = _child_seeds(seed, 2)
        x_f = np.linspace(self.domain[0], self.domain[1], n_f)
        _, f_ref = self.reference(x_f)
        x_b = np.array(self.domain)
        u_ref, _ = self.reference(x_b)
        return Dataset(
            problem=self.name,
            noise_sigma=float(sigma),
            seed=int(seed),
            y_obs=PointValues(x_f[:, None], generate_measurements(f_ref, sigma, s_f)),
            u_obs=PointValues(x_b[:, None], generate_measurements(u_ref, sigma, s_b)),
        )

    def build_evaluator(self, specs, dataset):
        return Poisson1DEvaluator(specs[0], dataset, kind="linear", k=self.k)

    def eval_points(self, n=101):
        return np.linspace(self.domain[0], self.domain[1], n)[:, None]


@dataclass(frozen=True)
class NonlinearPoisson:
    """lam u'' + k tanh(u) = f on [-0.7, 0.7]."""

    lam: float = NONLINEAR_LAM
    k: float = NONLINEAR_K
    domain: tuple[float, float] = (-0.7, 0.7)

    name = "nonlinear_poisson"
    field_names = ("u", "f")
    term_names = ("f", "b")
    data_term = "f"

    def reference(self, x):
        return ref_nonlinear_poisson(x)

    def default_specs(self):
        return (MlpSpec(1, (50, 50)),)

    def make_dataset(self, n_f, sigma, seed) -> Dataset:
        s_f, s_b = _child_seeds(seed, 2)
        x_f = np.linspace(self.domain[0], self.domain[1], n_f)
        _, f_ref = self.reference(x_f)
        x_b = np.array(self.domain)
        u_ref, _ = self.reference(x_b)
        return Dataset(
            problem=self.name,
            noise_sigma=float(sigma),
            seed=int(seed),
            y_obs=PointValues(x_f[:, None], generate_measurements(f_ref, sigma, s_f)),
            u_obs=PointValues(x_b[:, None], generate_measurements(u_ref, sigma, s_b)),
        )

    def build_evaluator(self, specs, dataset):
        return Poisson1DEvaluator(
            specs[0], dataset, kind="nonlinear", k=self.k, lam=self.lam
        )

    def eval_points(self, n=101):
        return np.linspace(self.domain[0], self.domain[1], n)[:, None]


@dataclass(frozen=True)
class Diffusion2D:
    """div(exp(y) grad h) = 0 on [0, L1] x [0, L2] with GRF log-diffusivity."""

    L1: float = 1.0
    L2: float = 0.5
    H: float = 0.0
    q: float = 1.0
    prior: GrfPrior = field(default_factory=GrfPrior)
    nx: int = 64
    ny: int = 32

    name = "diffusion_2d"
    field_names = ("y", "h")
    term_names = ("r", "dbr", "nbl", "nbt", "nbb", "y", "h")
    data_term = "y"

    def default_specs(self):
        return (MlpSpec(2, (60, 60, 60, 60)), MlpSpec(2, (60, 60, 60, 60)))

    def make_reference(self, seed):
        """(y_field, h_field): one GRF realization and its FD head solution."""
        y_field = sample_grf(self.prior, self.nx, self.ny, (self.L1, self.L2), seed)
        k_field = GridField(self.nx, self.ny, (self.L1, self.L2), np.exp(y_field.values))
        h_field = solve_diffusion_fd(k_field, self.H, self.q)
        return y_field, h_field

    def make_dataset(
        self,
        sigma,
        seed,
        y_field: GridField,
        h_field: GridField,
        n_y=40,
        n_r=500,
        n_dbr=54,
        n_nbl=54,
        n_nbt=128,
        n_nbb=128,
    ) -> Dataset:
        """y and h are observed at the same n_y random cell centers; boundary
        measurements share the field noise level sigma."""
        s_loc, s_res, s_y, s_h, s_dbr, s_nbl = _child_seeds(seed, 6)
        centers = y_field.cell_centers()
        rng = np.random.default_rng(s_loc)
        cells = np.sort(rng.choice(centers.shape[0], size=n_y, replace=False))
        obs_pts = centers[cells]
        y_vals = generate_measurements(y_field.flat()[cells], sigma, s_y)
        h_vals = generate_measurements(h_field.flat()[cells], sigma, s_h)

        t_dbr = np.linspace(0.0, self.L2, n_dbr)
        dbr_pts = np.column_stack([np.full(n_dbr, self.L1), t_dbr])
        dbr_vals = generate_measurements(np.full(n_dbr, self.H), sigma, s_dbr)

        t_nbl = np.linspace(0.0, self.L2, n_nbl)
        nbl_pts = np.column_stack([np.zeros(n_nbl), t_nbl])
        nbl_vals = generate_measurements(np.full(n_nbl, self.q), sigma, s_nbl)

        s_top = np.linspace(0.0, self.L1, n_nbt)
        s_bot = np.linspace(0.0, self.L1, n_nbb)
        res_rng = np.random.default_rng(s_res)
        res_pts = np.column_stack(
            [
                res_rng.uniform(0.0, self.L1, n_r),
                res_rng.uniform(0.0, self.L2, n_r),
            ]
        )
        return Dataset(
            problem=self.name,
            noise_sigma=float(sigma),
            seed=int(seed),
            y_obs=PointValues(obs_pts, y_vals),
            u_obs=PointValues(obs_pts.copy(), h_vals),
            dirichlet_obs=PointValues(dbr_pts, dbr_vals),
            neumann_obs=PointValues(nbl_pts, nbl_vals),
            residual_points=res_pts,
            neumann_top=np.column_stack([s_top, np.full(n_nbt, self.L2)]),
            neumann_bottom=np.column_stack([s_bot, np.zeros(n_nbb)]),
        )

    def build_evaluator(self, specs, dataset):
        return Diffusion2DEvaluator(specs[0], specs[1], dataset)

    def eval_points(self):
        grid = GridField(self.nx, self.ny, (self.L1, self.L2), np.zeros((self.nx, self.ny)))
        return grid.cell_centers()


PROBLEMS = {
    "linear_poisson": LinearPoisson,
    "nonlinear_poisson": NonlinearPoisson,
    "diffusion_2d": Diffusion2D,
}


# -- loss-term evaluators ---------------------------------------------------


class Poisson1DEvaluator:
    """Terms of the 1D Poisson problems.

    'f': source misfit values f_hat(x_f) (k u'' or lam u'' + k tanh u);
    'b': state values u_hat at the two boundary points.
    Not reentrant: term_backprop consumes the state of the last term_values.
    """

    term_names = ("f", "b")

    def __init__(self, spec: MlpSpec, dataset: Dataset, kind, k, lam=None):
        if kind not in ("linear", "nonlinear"):
            raise ValueError(f"unknown kind {kind!r}")
        self.spec = spec
        self.kind = kind
        self.k = k
        self.lam = lam
        self.n_params = spec.n_params
        self._kf = make_kernel(spec, dataset.y_obs.points, order=2)
        self._kb = make_kernel(spec, dataset.u_obs.points, order=0)
        self.targets = {
            "f": dataset.y_obs.values,
            "b": dataset.u_obs.values,
        }
        self._sech2 = None

    def term_counts(self):
        return {"f": len(self.targets["f"]), "b": len(self.targets["b"])}

    def term_values(self, params):
        v, _d1, d2 = self._kf.forward(params)
        if self.kind == "linear":
            fhat = self.k * d2[:, 0]
        else:
            t = np.tanh(v)
            self._sech2 = 1.0 - t * t
            fhat = self.lam * d2[:, 0] + self.k * t
        b, _, _ = self._kb.forward(params)
        return {"f": fhat, "b": b}

    def term_backprop(self, seeds):
        sf = np.asarray(seeds["f"])
        n = sf.shape[0]
        if self.kind == "linear":
            gv = np.zeros(n)
            gd2 = self.k * sf
        else:
            gv = self.k * self._sech2 * sf
            gd2 = self.lam * sf
        grad = self._kf.backward(gv, None, gd2[:, None])
        grad += self._kb.backward(np.asarray(seeds["b"]))
        return grad


class Diffusion2DEvaluator:
    """Terms of the 2D diffusion problem over theta_h || phi_y parameters."""

    term_names = ("r", "dbr", "nbl", "nbt", "nbb", "y", "h")

    def __init__(self, spec_h: MlpSpec, spec_y: MlpSpec, dataset: Dataset):
        self.spec_h = spec_h
        self.spec_y = spec_y
        self.n_h = spec_h.n_params
        self.n_params = spec_h.n_params + spec_y.n_params
        ds = dataset
        self._kh_r = make_kernel(spec_h, ds.residual_points, order=2)
        self._ky_r = make_kernel(spec_y, ds.residual_points, order=1)
        self._kh_dbr = make_kernel(spec_h, ds.dirichlet_obs.points, order=0)
        self._kh_nbl = make_kernel(spec_h, ds.neumann_obs.points, order=1)
        self._ky_nbl = make_kernel(spec_y, ds.neumann_obs.points, order=0)
        self._kh_nbt = make_kernel(spec_h, ds.neumann_top, order=1)
        self._ky_nbt = make_kernel(spec_y, ds.neumann_top, order=0)
        self._kh_nbb = make_kernel(spec_h, ds.neumann_bottom, order=1)
        self._ky_nbb = make_kernel(spec_y, ds.neumann_bottom, order=0)
        self._ky_obs = make_kernel(spec_y, ds.y_obs.points, order=0)
        self._kh_obs = make_kernel(spec_h, ds.u_obs.points, order=0)
        self.targets = {
            "r": np.zeros(ds.residual_points.shape[0]),
            "dbr": ds.dirichlet_obs.values,
            "nbl": ds.neumann_obs.values,
            "nbt": np.zeros(ds.neumann_top.shape[0]),
            "nbb": np.zeros(ds.neumann_bottom.shape[0]),
            "y": ds.y_obs.values,
            "h": ds.u_obs.values,
        }
        self._stash = {}

    def term_counts(self):
        return {name: len(self.targets[name]) for name in self.term_names}

    def _flux(self, kh, ky, params_h, params_y, axis):
        _hv, hd1, _ = kh.forward(params_h)
        yv, _, _ = ky.forward(params_y)
        E = np.exp(yv)
        flux = -E * hd1[:, axis]
        return flux, E, hd1

    def term_values(self, params):
        ph, py = params[: self.n_h], params[self.n_h :]
        st = self._stash

        _hv, hd1, hd2 = self._kh_r.forward(ph)
        yv, yd1, _ = self._ky_r.forward(py)
        E = np.exp(yv)
        R = E * (hd2.sum(axis=1) + (yd1 * hd1).sum(axis=1))
        st["r"] = (E, hd1, yd1, R)

        dbr, _, _ = self._kh_dbr.forward(ph)
        nbl, E_nbl, h1_nbl = self._flux(self._kh_nbl, self._ky_nbl, ph, py, axis=0)
        st["nbl"] = (E_nbl, h1_nbl, nbl)
        nbt, E_nbt, h1_nbt = self._flux(self._kh_nbt, self._ky_nbt, ph, py, axis=1)
        st["nbt"] = (E_nbt, h1_nbt, nbt)
        nbb, E_nbb, h1_nbb = self._flux(self._kh_nbb, self._ky_nbb, ph, py, axis=1)
        st["nbb"] = (E_nbb, h1_nbb, nbb)
        yo, _, _ = self._ky_obs.forward(py)
        ho, _, _ = self._kh_obs.forward(ph)
        return {
            "r": R,
            "dbr": dbr,
            "nbl": nbl,
            "nbt": nbt,
            "nbb": nbb,
            "y": yo,
            "h": ho,
        }

    def term_backprop(self, seeds):
        grad = np.zeros(self.n_params)
        gh, gy = grad[: self.n_h], grad[self.n_h :]
        st = self._stash

        s = np.asarray(seeds["r"])
        E, hd1, yd1, R = st["r"]
        gh += self._kh_r.backward(
            np.zeros_like(s),
            (E * s)[:, None] * yd1,
            np.repeat((E * s)[:, None], 2, axis=1),
        )
        gy += self._ky_r.backward(s * R, (E * s)[:, None] * hd1)

        gh += self._kh_dbr.backward(np.asarray(seeds["dbr"]))

        for name, kh, ky, axis in (
            ("nbl", self._kh_nbl, self._ky_nbl, 0),
            ("nbt", self._kh_nbt, self._ky_nbt, 1),
            ("nbb", self._kh_nbb, self._ky_nbb, 1),
        ):
            s = np.asarray(seeds[name])
            E, h1, flux = st[name]
            g1 = np.zeros_like(h1)
            g1[:, axis] = -E * s
            gh += kh.backward(np.zeros_like(s), g1)
            gy += ky.backward(s * flux)

        gy += self._ky_obs.backward(np.asarray(seeds["y"]))
        gh += self._kh_obs.backward(np.asarray(seeds["h"]))
        return grad


# -- problem setup bundle ---------------------------------------------------


@dataclass(frozen=True)
class ProblemSetup:
    """Picklable bundle (problem, dataset, network specs) for samplers."""

    problem: object
    dataset: Dataset
    specs: tuple[MlpSpec, ...]

    @property
    def layout(self):
        return self.specs[0] if len(self.specs) == 1 else tuple(self.specs)

    @property
    def n_params(self):
        return layout_n_params(self.layout)

    def evaluator(self):
        return self.problem.build_evaluator(self.specs, self.dataset)

    def init_params(self, seed):
        return np.asarray(init_params(self.layout, seed).values)


def field_predictor(setup: ProblemSetup, fname, points):
    """callable(flat_params) -> field values at fixed points.

    Field names: 'u'/'f' for the 1D problems, 'h'/'y' for the 2D problem.
    """
    problem = setup.problem
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if isinstance(problem, (LinearPoisson, NonlinearPoisson)):
        spec = setup.specs[0]
        if fname == "u":
            kern = make_kernel(spec, points, order=0)
            return lambda p: kern.forward(p)[0].copy()
        if fname == "f":
            kern = make_kernel(spec, points, order=2)
            if isinstance(problem, LinearPoisson):

                def pred(p):
                    v, _, d2 = kern.forward(p)
                    return problem.k * d2[:, 0]

            else:

                def pred(p):
                    v, _, d2 = kern.forward(p)
                    return problem.lam * d2[:, 0] + problem.k * np.tanh(v)

            return pred
    elif isinstance(problem, Diffusion2D):
        n_h = setup.specs[0].n_params
        if fname == "h":
            kern = make_kernel(setup.specs[0], points, order=0)
            return lambda p: kern.forward(p[:n_h])[0].copy()
        if fname == "y":
            kern = make_kernel(setup.specs[1], points, order=0)
            return lambda p: kern.forward(p[n_h:])[0].copy()
    raise ValueError(f"unknown field {fname!r} for problem {problem.name}")


# -- single-point residual operations (reference surface) -------------------


def residual_linear_poisson(params: ParameterVector, x, k=-1.0 / np.pi**2):
    """k * d2u/dx2 at one point (the model's f_hat)."""
    kern = make_kernel(params.layout, np.atleast_2d(float(x)), order=2)
    _, _, d2 = kern.forward(params.values)
    return float(k * d2[0, 0])


def residual_nonlinear_poisson(
    params: ParameterVector, x, lam=NONLINEAR_LAM, k=NONLINEAR_K
):
    """lam * u'' + k * tanh(u) at one point."""
    kern = make_kernel(params.layout, np.atleast_2d(float(x)), order=2)
    v, _, d2 = kern.forward(params.values)
    return float(lam * d2[0, 0] + k * np.tanh(v[0]))


def _split_two_net(params: ParameterVector):
    spec_h, spec_y = params.layout
    n_h = spec_h.n_params
    return spec_h, spec_y, params.values[:n_h], params.values[n_h:]


def residual_diffusion(params: ParameterVector, x):
    """exp(y) * (lap h + grad y . grad h) at one 2D point."""
    spec_h, spec_y, ph, py = _split_two_net(params)
    pt = np.atleast_2d(np.asarray(x, dtype=np.float64))
    kh = make_kernel(spec_h, pt, order=2)
    ky = make_kernel(spec_y, pt, order=1)
    _, hd1, hd2 = kh.forward(ph)
    yv, yd1, _ = ky.forward(py)
    return float(np.exp(yv[0]) * (hd2[0].sum() + yd1[0] @ hd1[0]))


def residual_neumann(params: ParameterVector, x, axis, sign=1.0):
    """sign * (-exp(y) dh/dx_axis) at one boundary point (flux)."""
    spec_h, spec_y, ph, py = _split_two_net(params)
    pt = np.atleast_2d(np.asarray(x, dtype=np.float64))
    kh = make_kernel(spec_h, pt, order=1)
    ky = make_kernel(spec_y, pt, order=0)
    _, hd1, _ = kh.forward(ph)
    yv, _, _ = ky.forward(py)
    return float(sign * (-np.exp(yv[0]) * hd1[0, axis]))
