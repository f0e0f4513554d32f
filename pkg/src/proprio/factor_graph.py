"""Nonlinear factor graph with sparse Levenberg-Marquardt batch solving.

Variables live on manifolds (Pose) or in vector spaces (numpy arrays); each
factor owns an error function and a positive-definite noise covariance.
Linearization whitens every residual block by the inverse covariance square
root so the total squared residual equals the sum of Mahalanobis norms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .errors import GaugeDeficiencyError, GraphError
from .lie import Pose, log_so3, right_jacobian_inv_so3, se3_log_binary_jacobians

FD_STEP = 1e-7

# below this many scalar unknowns the damped step is solved by dense QR
DENSE_LIMIT = 500

# relative singular-value threshold for calling a direction numerically null
NULLSPACE_RTOL = 1e-10


@dataclass(frozen=True, order=True)
class Key:
    """Variable identifier: kind tag plus time/leg/chain-depth indices.

    Unused indices stay at -1. The derived ordering gives the deterministic
    column layout of the linear system.
    """

    kind: str
    k: int = -1
    f: int = -1
    j: int = -1

    def __repr__(self):
        idx = ",".join(str(i) for i in (self.k, self.f, self.j) if i >= 0)
        return f"{self.kind}[{idx}]"


def tangent_dim(value) -> int:
    if isinstance(value, Pose):
        return 6
    return int(np.asarray(value).shape[0])


def retract_value(value, delta: np.ndarray):
    if isinstance(value, Pose):
        return value.retract(delta)
    return value + delta


def _retract_probe(value, delta: np.ndarray):
    # finite-difference probe: orthonormalization is unnecessary at step scale
    if isinstance(value, Pose):
        return value.retract_fast(delta)
    return value + delta


class Values:
    """Ordered map Key -> manifold value (Pose or vector)."""

    def __init__(self):
        self._data: dict[Key, object] = {}

    def insert(self, key: Key, value) -> "Values":
        if key in self._data:
            raise GraphError(f"duplicate variable key {key}")
        self._data[key] = value
        return self

    def __getitem__(self, key: Key):
        return self._data[key]

    def __contains__(self, key: Key) -> bool:
        return key in self._data

    def __len__(self) -> int:
        return len(self._data)

    def keys(self):
        return self._data.keys()

    def copy(self) -> "Values":
        out = Values()
        out._data = dict(self._data)
        return out

    def retract(self, delta: dict[Key, np.ndarray]) -> "Values":
        """Apply per-key tangent updates, returning a new container."""
        out = Values()
        out._data = dict(self._data)
        for key, d in delta.items():
            out._data[key] = retract_value(out._data[key], d)
        return out


class Factor:
    """Base residual term: ordered keys, error function, noise covariance.

    Subclasses implement ``error(vals)`` with ``vals`` aligned to ``keys``.
    ``jacobians`` may return analytic blocks; the default central-difference
    fallback perturbs each variable on its tangent.
    """

    def __init__(self, keys, cov: np.ndarray):
        self.keys = list(keys)
        cov = np.asarray(cov, dtype=float)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise GraphError("covariance must be square")
        if not np.allclose(cov, cov.T, atol=1e-12):
            raise GraphError("covariance must be symmetric")
        try:
            L = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as e:
            raise GraphError("covariance must be positive definite") from e
        self.cov = cov
        # rows of sqrt information: whitened r = _sqrt_info @ r
        self._sqrt_info = scipy.linalg.solve_triangular(L, np.eye(cov.shape[0]), lower=True)

    @property
    def dim(self) -> int:
        return self.cov.shape[0]

    def error(self, vals) -> np.ndarray:
        raise NotImplementedError

    def jacobians(self, vals):
        return None

    def whiten(self, r: np.ndarray) -> np.ndarray:
        return self._sqrt_info @ r

    def fd_jacobians(self, vals):
        """Central finite differences of the raw error on each variable's tangent."""
        jacs = []
        vals = list(vals)
        for i, v in enumerate(vals):
            n = tangent_dim(v)
            J = np.empty((self.dim, n))
            for d in range(n):
                step = np.zeros(n)
                step[d] = FD_STEP
                vp = list(vals)
                vm = list(vals)
                vp[i] = _retract_probe(v, step)
                vm[i] = _retract_probe(v, -step)
                J[:, d] = (self.error(vp) - self.error(vm)) / (2.0 * FD_STEP)
            jacs.append(J)
        return jacs


class PriorFactor(Factor):
    """Anchors a single variable to a fixed value (pose or vector)."""

    def __init__(self, key: Key, prior, cov: np.ndarray):
        super().__init__([key], cov)
        self.prior = prior

    def error(self, vals):
        v = vals[0]
        if isinstance(v, Pose):
            return np.concatenate([log_so3(self.prior.R.T @ v.R), v.t - self.prior.t])
        return v - self.prior

    def jacobians(self, vals):
        v = vals[0]
        if isinstance(v, Pose):
            J = np.zeros((6, 6))
            J[:3, :3] = right_jacobian_inv_so3(log_so3(self.prior.R.T @ v.R))
            J[3:, 3:] = np.eye(3)
            return [J]
        return [np.eye(self.dim)]


class RelativePoseFactor(Factor):
    """Constrains the relative transform between two poses to a measurement."""

    def __init__(self, key_i: Key, key_j: Key, measured: Pose, cov: np.ndarray):
        super().__init__([key_i, key_j], cov)
        self.measured_inv = measured.inverse()

    def error(self, vals):
        from .lie import log_se3
        pi, pj = vals
        return log_se3(self.measured_inv * (pi.inverse() * pj))

    def jacobians(self, vals):
        pi, pj = vals
        _, JP, JC = se3_log_binary_jacobians(self.measured_inv, pi, pj)
        return [JP, JC]


@dataclass
class LinearSystem:
    """Whitened sparse linearization: per-factor Jacobian blocks plus residual."""

    keys: list[Key]
    col_offsets: dict[Key, int]
    num_cols: int
    blocks: list  # (row_offset, [(key, whitened J block), ...])
    residual: np.ndarray  # stacked whitened residual
    row_slices: list  # per factor (start, stop)

    @property
    def num_rows(self) -> int:
        return self.residual.shape[0]

    def objective(self) -> float:
        return float(self.residual @ self.residual)

    def to_sparse(self) -> scipy.sparse.csr_matrix:
        rows, cols, vals = [], [], []
        for row0, entries in self.blocks:
            for key, block in entries:
                c0 = self.col_offsets[key]
                r_idx, c_idx = np.meshgrid(
                    np.arange(row0, row0 + block.shape[0]),
                    np.arange(c0, c0 + block.shape[1]),
                    indexing="ij",
                )
                rows.append(r_idx.ravel())
                cols.append(c_idx.ravel())
                vals.append(block.ravel())
        return scipy.sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.num_rows, self.num_cols),
        )

    def to_dense(self) -> np.ndarray:
        J = np.zeros((self.num_rows, self.num_cols))
        for row0, entries in self.blocks:
            for key, block in entries:
                c0 = self.col_offsets[key]
                J[row0:row0 + block.shape[0], c0:c0 + block.shape[1]] = block
        return J

    def split_delta(self, delta: np.ndarray) -> dict[Key, np.ndarray]:
        out = {}
        for key in self.keys:
            c0 = self.col_offsets[key]
            c1 = c0 + self._key_dims[key]
            out[key] = delta[c0:c1]
        return out


class FactorGraph:
    def __init__(self):
        self.factors: list[Factor] = []

    def add_factor(self, factor: Factor) -> "FactorGraph":
        self.factors.append(factor)
        return self

    def __len__(self) -> int:
        return len(self.factors)

    def objective(self, values: Values) -> float:
        total = 0.0
        for f in self.factors:
            r = f.whiten(f.error([values[k] for k in f.keys]))
            total += float(r @ r)
        return total

    def linearize(self, values: Values) -> LinearSystem:
        """Whitened Jacobian blocks and residual at the given linearization point."""
        referenced = set()
        for f in self.factors:
            for k in f.keys:
                if k not in values:
                    raise GraphError(f"factor references missing key {k}")
                referenced.add(k)
        keys = sorted(referenced)
        col_offsets = {}
        key_dims = {}
        ncols = 0
        for k in keys:
            col_offsets[k] = ncols
            key_dims[k] = tangent_dim(values[k])
            ncols += key_dims[k]

        blocks = []
        residuals = []
        row_slices = []
        row = 0
        for f in self.factors:
            vals = [values[k] for k in f.keys]
            r = f.error(vals)
            if r.shape[0] != f.dim:
                raise GraphError(
                    f"residual dimension {r.shape[0]} does not match covariance {f.dim}")
            jacs = f.jacobians(vals)
            if jacs is None:
                jacs = f.fd_jacobians(vals)
            entries = [(k, f._sqrt_info @ J) for k, J in zip(f.keys, jacs)]
            blocks.append((row, entries))
            residuals.append(f.whiten(r))
            row_slices.append((row, row + f.dim))
            row += f.dim
        system = LinearSystem(keys, col_offsets, ncols, blocks,
                              np.concatenate(residuals) if residuals else np.zeros(0),
                              row_slices)
        system._key_dims = key_dims
        return system


def solve_normal_equations(lin: LinearSystem, lam: float) -> dict[Key, np.ndarray]:
    """Solve (J'J + lam*diag(J'J)) d = -J'r for the tangent update.

    With lam=0 this is the Gauss-Newton step; a rank-deficient undamped
    system raises GaugeDeficiencyError with the numerical nullspace size.
    """
    if lam < 0:
        raise ValueError("damping must be non-negative")
    n = lin.num_cols
    if n <= DENSE_LIMIT:
        J = lin.to_dense()
        if lam == 0.0:
            sv = np.linalg.svd(J, compute_uv=False)
            null_dim = int(np.sum(sv < NULLSPACE_RTOL * sv[0])) + max(0, n - len(sv))
            if null_dim > 0:
                raise GaugeDeficiencyError(null_dim)
            delta, *_ = np.linalg.lstsq(J, -lin.residual, rcond=None)
        else:
            d = np.sqrt(lam * np.sum(J * J, axis=0))
            A = np.vstack([J, np.diag(d)])
            b = np.concatenate([-lin.residual, np.zeros(n)])
            q, r = np.linalg.qr(A)
            delta = scipy.linalg.solve_triangular(r, q.T @ b)
    else:
        J = lin.to_sparse()
        H = (J.T @ J).tocsc()
        g = J.T @ lin.residual
        if lam > 0.0:
            H = H + scipy.sparse.diags(lam * H.diagonal())
        try:
            delta = scipy.sparse.linalg.splu(H.tocsc()).solve(-g)
        except RuntimeError as e:
            raise GaugeDeficiencyError(-1, f"sparse factorization failed: {e}") from e
        if not np.all(np.isfinite(delta)):
            raise GaugeDeficiencyError(-1, "non-finite solution, system singular")
    return lin.split_delta(delta)


@dataclass
class LMConfig:
    lambda_init: float = 1e-4
    lambda_factor: float = 10.0
    lambda_max: float = 1e8
    rtol: float = 1e-9
    xtol: float = 1e-10
    max_iterations: int = 100
    # scale a step down when any rotation tangent exceeds this, keeping every
    # iterate inside the region where the linearization is trustworthy; bad
    # initializations otherwise drive multi-radian steps into wound-up minima
    rot_step_max: float = 0.2


@dataclass
class LMReport:
    """Per-iteration trace of the optimization, serializable for plotting."""

    iterations: list = field(default_factory=list)  # (iteration, lambda, objective)
    status: str = "running"
    accepted_steps: int = 0
    final_objective: float = float("nan")

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def to_text(self) -> str:
        lines = [f"{it} {lam:.6e} {obj:.17e}" for it, lam, obj in self.iterations]
        return "\n".join(lines) + "\n"


def lm_optimize(graph: FactorGraph, initial: Values, config: LMConfig | None = None):
    """Levenberg-Marquardt over the graph; accepted steps never increase the objective."""
    config = config or LMConfig()
    values = initial
    obj = graph.objective(values)
    report = LMReport()
    lam = config.lambda_init
    report.iterations.append((0, lam, obj))

    for it in range(1, config.max_iterations + 1):
        lin = graph.linearize(values)
        accepted = False
        while True:
            delta = solve_normal_equations(lin, lam)
            step_norm = np.sqrt(sum(float(d @ d) for d in delta.values()))
            if step_norm < config.xtol:
                report.status = "converged"
                report.final_objective = obj
                return values, report
            rot_max = max((np.sqrt(d[:3] @ d[:3]) for k, d in delta.items()
                           if isinstance(values[k], Pose)), default=0.0)
            if rot_max > config.rot_step_max:
                scale = config.rot_step_max / rot_max
                delta = {k: d * scale for k, d in delta.items()}
            candidate = values.retract(delta)
            cand_obj = graph.objective(candidate)
            if cand_obj < obj:
                decrease = obj - cand_obj
                values = candidate
                old_obj = obj
                obj = cand_obj
                lam /= config.lambda_factor
                report.accepted_steps += 1
                report.iterations.append((it, lam, obj))
                accepted = True
                if decrease < config.rtol * max(old_obj, 1e-300):
                    report.status = "converged"
                    report.final_objective = obj
                    return values, report
                break
            lam *= config.lambda_factor
            if lam > config.lambda_max:
                report.status = "diverged"
                report.final_objective = obj
                report.iterations.append((it, lam, obj))
                return values, report
        if not accepted:  # pragma: no cover - loop exits are handled above
            break

    report.status = "max_iterations"
    report.final_objective = obj
    return values, report
