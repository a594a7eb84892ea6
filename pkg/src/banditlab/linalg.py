"""Dense online ridge regression and small spectral helpers.

Every policy in this package keeps one or more :class:`RidgeState` values:
a Gram matrix ``M = sum_s w_s x_s x_s^T`` (data only -- the ``lam * I``
ridge term is applied at inversion time), the response vector
``b = sum_s w_s r_s x_s``, and a cached inverse of ``lam*I + M`` maintained
with Sherman-Morrison rank-1 updates.  Keeping ``lam`` out of ``gram``
lets the same state serve formulas that place the regularizer differently
(plain ridge, per-layer ``2^{-2l} I`` priors, ``lam/kappa`` scalings).

States are plain values: no interior sharing, safe to move across threads,
never mutated concurrently.
"""

from __future__ import annotations

import numpy as np

from .errors import SingularSystemError

__all__ = ["RidgeState", "min_eigenvalue"]

# Rebuild the cached inverse from scratch this often to stop rank-1
# round-off from accumulating.  Cost is negligible at the dimensions
# this package targets (d <= ~512).
_REFRESH_EVERY = 512


class RidgeState:
    """Online weighted ridge regression in ``dim`` dimensions.

    Parameters
    ----------
    dim : int
        Feature dimension (positive).
    reg : float
        Ridge regularizer ``lam >= 0``.  With ``reg == 0`` the state is
        usable only once the accumulated Gram matrix is full rank;
        :meth:`estimate` raises :class:`SingularSystemError` before that.

    Attributes
    ----------
    gram : (dim, dim) ndarray
        ``sum_s w_s x_s x_s^T`` -- the data part only, no ``reg * I``.
    resp : (dim,) ndarray
        ``sum_s w_s r_s x_s``.
    count : int
        Number of :meth:`update` calls absorbed, *including* zero-weight
        calls (several algorithms step their per-user round counter
        unconditionally, so the state mirrors that).
    weight_sum : float
        ``sum_s w_s``.
    """

    __slots__ = ("dim", "reg", "gram", "resp", "count", "weight_sum", "_inv", "_since_refresh")

    def __init__(self, dim: int, reg: float):
        if not isinstance(dim, (int, np.integer)) or dim <= 0:
            raise ValueError(f"dim must be a positive integer, got {dim!r}")
        reg = float(reg)
        if not np.isfinite(reg) or reg < 0:
            raise ValueError(f"reg must be a finite nonnegative real, got {reg!r}")
        self.dim = int(dim)
        self.reg = reg
        self.gram = np.zeros((dim, dim))
        self.resp = np.zeros(dim)
        self.count = 0
        self.weight_sum = 0.0
        # Inverse of (reg*I + gram); None means "not yet computable"
        # (only possible while reg == 0 and gram is rank deficient).
        self._inv = np.eye(dim) / reg if reg > 0 else None
        self._since_refresh = 0

    # ------------------------------------------------------------------
    # updates

    def update(self, x, r: float, w: float = 1.0) -> None:
        """Absorb one sample ``(x, r)`` with weight ``w >= 0``.

        ``gram += w x x^T``, ``resp += w r x``, and the cached inverse is
        advanced by the Sherman-Morrison identity.  A zero-weight call
        changes no statistics except ``count``.

        Raises
        ------
        ValueError
            If ``x`` has the wrong dimension (a configuration error (the
            caller wired mismatched feature spaces together)), or any
            input is non-finite, or ``w < 0``.
        """
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(
                f"dimension mismatch: state has dim={self.dim}, sample has shape {x.shape}"
            )
        r = float(r)
        w = float(w)
        if not np.all(np.isfinite(x)):
            raise ValueError("rejected update: non-finite feature vector")
        if not np.isfinite(r):
            raise ValueError(f"rejected update: non-finite reward {r!r}")
        if not np.isfinite(w):
            raise ValueError(f"rejected update: non-finite weight {w!r}")
        if w < 0:
            raise ValueError(f"rejected update: negative weight {w!r}")

        self.count += 1
        if w == 0.0:
            return
        self.weight_sum += w
        self.gram += w * np.outer(x, x)
        self.resp += w * r * x

        if self._inv is not None:
            self._since_refresh += 1
            if self._since_refresh >= _REFRESH_EVERY:
                self._refresh()
            else:
                ainv_x = self._inv @ x
                denom = 1.0 + w * float(x @ ainv_x)
                self._inv -= np.outer(ainv_x, ainv_x) * (w / denom)

    def _refresh(self) -> None:
        a = self.reg * np.eye(self.dim) + self.gram
        if self.reg == 0.0:
            eig = np.linalg.eigvalsh(a)
            if eig[0] <= 1e-12 * max(1.0, eig[-1]):
                self._inv = None
                self._since_refresh = 0
                return
        self._inv = np.linalg.inv(a)
        self._since_refresh = 0

    # ------------------------------------------------------------------
    # queries

    @property
    def gram_inv(self) -> np.ndarray:
        """Cached inverse of ``reg*I + gram``.

        Raises :class:`SingularSystemError` when ``reg == 0`` and the Gram
        matrix is still rank deficient.
        """
        if self._inv is None:
            a = self.gram  # reg == 0 here
            eig = np.linalg.eigvalsh(a)
            if eig[0] <= 1e-12 * max(1.0, eig[-1]):
                raise SingularSystemError(
                    "singular system: reg=0 and the Gram matrix is rank deficient "
                    f"(min eigenvalue {eig[0]:.3e}); supply reg > 0 or more data"
                )
            self._inv = np.linalg.inv(a)
            self._since_refresh = 0
        return self._inv

    def estimate(self) -> np.ndarray:
        """Ridge estimate ``(reg*I + gram)^{-1} resp``."""
        return self.gram_inv @ self.resp

    def mnorm(self, x) -> float:
        """Mahalanobis norm ``sqrt(x^T (reg*I + gram)^{-1} x)``."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(
                f"dimension mismatch: state has dim={self.dim}, vector has shape {x.shape}"
            )
        q = float(x @ self.gram_inv @ x)
        return np.sqrt(q) if q > 0.0 else 0.0

    def copy(self) -> "RidgeState":
        """Independent deep copy."""
        out = RidgeState.__new__(RidgeState)
        out.dim = self.dim
        out.reg = self.reg
        out.gram = self.gram.copy()
        out.resp = self.resp.copy()
        out.count = self.count
        out.weight_sum = self.weight_sum
        out._inv = None if self._inv is None else self._inv.copy()
        out._since_refresh = self._since_refresh
        return out


def min_eigenvalue(m) -> float:
    """Smallest eigenvalue of a symmetric matrix.

    Rejects matrices whose asymmetry exceeds ``1e-10`` (entrywise) rather
    than silently symmetrizing them.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if m.size and np.max(np.abs(m - m.T)) > 1e-10:
        raise ValueError("matrix is not symmetric within 1e-10; refusing to guess")
    return float(np.linalg.eigvalsh(m)[0])
