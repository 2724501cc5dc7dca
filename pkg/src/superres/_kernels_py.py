"""Pure-numpy versions of the loop kernels (used when the extension is absent)."""
import numpy as np
from scipy.signal import lfilter


def ou_recursion(xi, rho, sd):
    """Stationary AR(1): ``x0 = sd xi0``, ``x_k = rho x_{k-1} + sd sqrt(1-rho^2) xi_k``."""
    xi = np.asarray(xi, dtype=float)
    drive = sd * np.sqrt(1.0 - rho * rho) * xi
    drive[..., 0] = sd * xi[..., 0]
    return lfilter([1.0], [1.0, -rho], drive, axis=-1)


def su2_survival(za, xb):
    """Survival of |+> under the product of exp(-i(za_k sz + xb_k sx)) cells.

    za : (n_shots, n_cells) z angles; xb : (n_cells,) x angles shared by all shots.
    """
    za = np.asarray(za, dtype=float)
    xb = np.asarray(xb, dtype=float)
    n = za.shape[0]
    s = 1 / np.sqrt(2)
    p0 = np.full(n, s, dtype=complex)
    p1 = np.full(n, s, dtype=complex)
    for k in range(za.shape[1]):
        a = za[:, k]
        b = xb[k]
        r = np.hypot(a, b)
        c = np.cos(r)
        sr = np.where(r > 0, np.sin(r) / np.where(r > 0, r, 1.0), 1.0)
        ia = 1j * sr * a
        ib = 1j * sr * b
        p0, p1 = (c - ia) * p0 - ib * p1, -ib * p0 + (c + ia) * p1
    amp = (p0 + p1) * s
    return np.abs(amp) ** 2
