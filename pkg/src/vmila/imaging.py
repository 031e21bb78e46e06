"""Poisson image restoration: KL data term, Gaussian blur, TV + nonnegativity.

Images are ``(height, width)`` float arrays stored row-major; solver vectors
are their ravelled form. The regularizer is written as ``g(A x)`` with
``A = [grad; I]`` of shape ``(3n, n)``. In a vector ``u = A x`` the first
``2n`` entries hold the two gradient components as a ``(2, height, width)``
block, so the per-pixel 2-vector of pixel ``i`` is ``(u[i], u[n + i])``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.ndimage import convolve1d
from scipy.special import rel_entr

from .core import IdentityOperator, LinearOperator, StackedOperator, as_vector
from .model import MEMBERSHIP_TOL, CompositeProblem, NonsmoothTerm, SmoothTerm

__all__ = [
    "ImageGrid",
    "BlurOperator",
    "GradientOperator",
    "KLDivergence",
    "TVNonnegative",
    "TestProblem",
    "TABLE1",
    "make_blur",
    "gaussian_kernel",
    "kl_value",
    "kl_gradient",
    "discrete_gradient",
    "discrete_gradient_adjoint",
    "tv_value",
    "build_regularizer",
    "simulate_poisson",
    "shepp_logan",
    "synthetic_micro",
    "downsample",
    "rescale",
    "make_test_problem",
    "write_raw",
    "read_raw",
    "read_pgm",
]

log = logging.getLogger(__name__)

# psf support in units of sigma
KERNEL_RADIUS_SIGMAS = 4.0


@dataclass(frozen=True)
class ImageGrid:
    pixels: np.ndarray

    def __post_init__(self):
        a = np.array(self.pixels, dtype=np.float64, ndmin=2)
        if a.ndim != 2:
            raise ValueError("ImageGrid expects a 2-D array")
        if not np.all(np.isfinite(a)):
            raise ValueError("image pixels must be finite")
        a.setflags(write=False)
        object.__setattr__(self, "pixels", a)

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def shape(self):
        return self.pixels.shape

    @property
    def size(self):
        return self.pixels.size

    def ravel(self):
        return self.pixels.ravel().copy()

    @classmethod
    def from_vector(cls, x, height, width):
        return cls(as_vector(x, height * width).reshape(height, width))


def _as_image(x, shape):
    return as_vector(x, shape[0] * shape[1]).reshape(shape)


# --------------------------------------------------------------- blur


def gaussian_kernel(sigma_psf):
    """Sampled 1-D Gaussian truncated at ``+-4 sigma`` with unit mass."""
    if not sigma_psf > 0:
        raise ValueError("sigma_psf must be positive")
    r = int(np.ceil(KERNEL_RADIUS_SIGMAS * sigma_psf))
    t = np.arange(-r, r + 1, dtype=float)
    k = np.exp(-0.5 * (t / sigma_psf) ** 2)
    return k / k.sum()


class BlurOperator(LinearOperator):
    """Separable Gaussian convolution with half-sample symmetric boundaries.

    The kernel is symmetric, so the operator is self-adjoint and maps
    constant images to themselves.
    """

    def __init__(self, height, width, sigma_psf):
        if sigma_psf >= min(width, height) / 6.0:
            warnings.warn(
                f"sigma_psf={sigma_psf} is large for a {height}x{width} image; "
                "the truncated kernel wraps through several reflections",
                RuntimeWarning, stacklevel=2,
            )
        self.image_shape = (height, width)
        self.sigma_psf = float(sigma_psf)
        self.kernel = gaussian_kernel(sigma_psf)
        n = height * width
        self.shape = (n, n)

    def apply_image(self, img):
        out = convolve1d(img, self.kernel, axis=0, mode="reflect")
        return convolve1d(out, self.kernel, axis=1, mode="reflect")

    def apply(self, x):
        return self.apply_image(_as_image(x, self.image_shape)).ravel()

    def adjoint(self, v):
        return self.apply(v)

    @property
    def psf(self):
        return np.outer(self.kernel, self.kernel)


def make_blur(width, height, sigma_psf) -> LinearOperator:
    return BlurOperator(height, width, sigma_psf)


# -------------------------------------------------------- KL data term


def _background_image(H, x, bg):
    t = H.apply(x) + bg
    if np.any(t <= 0):
        raise ValueError("H x + bg must be strictly positive")
    return t


def kl_value(x, H, b, bg) -> float:
    """``sum_i b_i log(b_i / t_i) + t_i - b_i`` with ``t = H x + bg``."""
    b = as_vector(b)
    t = _background_image(H, as_vector(x), bg)
    return float(np.sum(rel_entr(b, t) + t - b))


def kl_gradient(x, H, b, bg) -> np.ndarray:
    b = as_vector(b)
    t = _background_image(H, as_vector(x), bg)
    return H.adjoint(1.0 - b / t)


class KLDivergence(SmoothTerm):
    """``f0(x) = KL(H x + bg, b)``; domain ``{x : H x + bg > 0}``."""

    def __init__(self, H: LinearOperator, b, bg):
        if not bg > 0:
            raise ValueError("background must be positive")
        self.H = H
        self.b = as_vector(b, H.shape[0])
        if np.any(self.b < 0):
            raise ValueError("data must be nonnegative")
        self.bg = float(bg)
        self.ht_one = H.adjoint(np.ones(H.shape[0]))

    def value(self, x):
        return kl_value(x, self.H, self.b, self.bg)

    def gradient(self, x):
        return kl_gradient(x, self.H, self.b, self.bg)

    def in_domain(self, x):
        return bool(np.all(self.H.apply(as_vector(x)) + self.bg > 0))


# ------------------------------------------------------ total variation


def discrete_gradient(img) -> np.ndarray:
    """Forward differences, zero at the last row and column.

    Returns a ``(2, height, width)`` array: horizontal then vertical component.
    """
    img = np.asarray(img, dtype=np.float64)
    g = np.zeros((2,) + img.shape)
    g[0, :, :-1] = img[:, 1:] - img[:, :-1]
    g[1, :-1, :] = img[1:, :] - img[:-1, :]
    return g


def discrete_gradient_adjoint(g) -> np.ndarray:
    """Adjoint of :func:`discrete_gradient` (the negative divergence)."""
    g = np.asarray(g, dtype=np.float64)
    gx, gy = g[0], g[1]
    out = np.zeros(gx.shape)
    out[:, :-1] -= gx[:, :-1]
    out[:, 1:] += gx[:, :-1]
    out[:-1, :] -= gy[:-1, :]
    out[1:, :] += gy[:-1, :]
    return out


def tv_value(x, rho, shape=None) -> float:
    """Isotropic TV ``rho * sum_i ||grad_i x||``; `x` is an image or a vector with `shape`."""
    img = np.asarray(x, dtype=np.float64) if shape is None else _as_image(x, shape)
    g = discrete_gradient(img)
    return float(rho * np.sum(np.hypot(g[0], g[1])))


class GradientOperator(LinearOperator):
    """Discrete gradient as a ``(2n, n)`` operator on ravelled images."""

    def __init__(self, height, width):
        self.image_shape = (height, width)
        n = height * width
        self.shape = (2 * n, n)

    def apply(self, x):
        return discrete_gradient(_as_image(x, self.image_shape)).ravel()

    def adjoint(self, v):
        g = as_vector(v, self.shape[0]).reshape((2,) + self.image_shape)
        return discrete_gradient_adjoint(g).ravel()


class TVNonnegative(NonsmoothTerm):
    """``f1(x) = rho * TV(x) + indicator(x >= 0)`` as ``g(A x)``, ``A = [grad; I]``.

    ``g*`` is the indicator of ``rho``-balls on the gradient pixel pairs
    times the nonpositive orthant on the identity block, so its resolvent is
    a projection independent of the scale.
    """

    def __init__(self, height, width, rho):
        if not rho > 0:
            raise ValueError("rho must be positive")
        self.rho = float(rho)
        self.image_shape = (height, width)
        self.n = height * width
        self.operator = StackedOperator(GradientOperator(height, width), IdentityOperator(self.n))

    def _split(self, u):
        u = as_vector(u, 3 * self.n)
        n = self.n
        return u[:n], u[n:2 * n], u[2 * n:]

    def g_value(self, u):
        ux, uy, ui = self._split(u)
        if np.any(ui < 0):
            return np.inf
        return self.rho * float(np.sum(np.hypot(ux, uy)))

    def g_conjugate_value(self, v):
        vx, vy, vi = self._split(v)
        if np.any(vi > 0):
            return np.inf
        if np.hypot(vx, vy).max(initial=0.0) > self.rho * (1 + MEMBERSHIP_TOL):
            return np.inf
        return 0.0

    def conjugate_resolvent(self, u, scale):
        ux, uy, ui = self._split(u)
        norm = np.hypot(ux, uy)
        shrink = self.rho / np.maximum(norm, self.rho)
        return np.concatenate([ux * shrink, uy * shrink, np.minimum(ui, 0.0)])

    def feasible_project(self, x):
        return np.maximum(as_vector(x, self.n), 0.0)


def build_regularizer(rho, height, width) -> NonsmoothTerm:
    return TVNonnegative(height, width, rho)


# ----------------------------------------------------------- test images


def simulate_poisson(exact, seed) -> np.ndarray:
    """Per-pixel Poisson counts with mean `exact`, as float array of integers."""
    exact = np.asarray(exact, dtype=np.float64)
    if np.any(exact < 0) or not np.all(np.isfinite(exact)):
        raise ValueError("Poisson means must be finite and nonnegative")
    rng = np.random.default_rng(seed)
    return rng.poisson(exact).astype(np.float64)


# modified Shepp-Logan: intensity, semi-axes a, b, centre x0, y0, angle (deg)
_SHEPP_LOGAN = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
)


def shepp_logan(size) -> np.ndarray:
    """Modified Shepp-Logan phantom on ``[-1, 1]^2`` sampled at pixel centres."""
    c = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    X, Y = np.meshgrid(c, -c)
    img = np.zeros((size, size))
    for val, a, b, x0, y0, deg in _SHEPP_LOGAN:
        th = np.deg2rad(deg)
        xr = (X - x0) * np.cos(th) + (Y - y0) * np.sin(th)
        yr = -(X - x0) * np.sin(th) + (Y - y0) * np.cos(th)
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += val
    return img


def synthetic_micro(size, seed=0) -> np.ndarray:
    """Fluorescence-like synthetic: blurred filaments and bright spots on a dim floor."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    img = np.zeros((size, size))
    for _ in range(12):
        # thin curved filament as a distance-to-curve profile
        cx, cy = rng.uniform(0, size, 2)
        r = rng.uniform(0.15, 0.6) * size
        dist = np.abs(np.hypot(xx - cx, yy - cy) - r)
        img += rng.uniform(0.3, 1.0) * np.exp(-0.5 * (dist / 1.2) ** 2)
    for _ in range(25):
        cx, cy = rng.uniform(0, size, 2)
        s = rng.uniform(1.0, 3.0)
        img += rng.uniform(0.5, 2.0) * np.exp(-0.5 * ((xx - cx) ** 2 + (yy - cy) ** 2) / s**2)
    return img


def downsample(img, factor) -> np.ndarray:
    """Block mean over ``factor x factor`` tiles; trailing partial tiles are dropped."""
    factor = int(factor)
    if factor < 1:
        raise ValueError("downsampling factor must be >= 1")
    if factor == 1:
        return np.asarray(img, dtype=float).copy()
    h, w = (s // factor for s in img.shape)
    a = np.asarray(img, dtype=float)[: h * factor, : w * factor]
    return a.reshape(h, factor, w, factor).mean(axis=(1, 3))


def rescale(img, lo, hi) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    span = img.max() - img.min()
    if span == 0:
        return np.full_like(img, lo)
    return lo + (hi - lo) * (img - img.min()) / span


@dataclass(frozen=True)
class ProblemSpec:
    size: int
    value_range: tuple
    sigma_psf: float
    bg: float
    rho: float


TABLE1 = {
    "cameraman": ProblemSpec(256, (0.0, 1000.0), 1.4, 5.0, 0.0091),
    "micro": ProblemSpec(128, (1.0, 69.0), 3.2, 0.5, 0.09),
    "phantom": ProblemSpec(256, (0.0, 1000.0), 1.4, 10.0, 0.004),
}


def _reference_image(name, size, seed, reference):
    if reference is not None:
        path = Path(reference)
        if not path.exists():
            raise FileNotFoundError(f"reference image {path} not found")
        img = read_pgm(path) if path.suffix.lower() in (".pgm", ".pnm") else read_raw(path)
        return np.asarray(img, dtype=float)
    if name == "phantom":
        return shepp_logan(size)
    if name == "micro":
        return synthetic_micro(size, seed)
    if name == "cameraman":
        try:
            from skimage import data
        except ImportError as exc:
            raise FileNotFoundError(
                "cameraman needs scikit-image or an explicit reference image file"
            ) from exc
        cam = data.camera().astype(float)
        # bring the bundled image to the tabulated size before desk-scale reduction
        return downsample(cam, max(cam.shape[0] // size, 1))
    raise ValueError(f"unknown test problem {name!r}; choose from {sorted(TABLE1)}")


@dataclass(frozen=True)
class TestProblem:
    name: str
    ground_truth: ImageGrid
    data: ImageGrid
    blur: LinearOperator
    bg: float
    rho: float
    rng_seed: int
    scale: int = 1

    __test__ = False  # not a pytest class

    @property
    def shape(self):
        return self.ground_truth.shape

    @cached_property
    def problem(self) -> CompositeProblem:
        h, w = self.shape
        return CompositeProblem(
            KLDivergence(self.blur, self.data.ravel(), self.bg),
            build_regularizer(self.rho, h, w),
        )

    def initial_point(self):
        """Constant image with the mean of ``b - bg``, clamped at zero; always feasible."""
        m = max(float(np.mean(self.data.pixels)) - self.bg, 0.0)
        return np.full(self.ground_truth.size, m)


def make_test_problem(name, scale=1, seed=0, noise=True, blur=True, reference=None) -> TestProblem:
    """Build one of the standard deblurring test problems, optionally downsampled by the integer factor `scale`.

    Pipeline: reference image, block-mean downsampling, rescaling to the
    tabulated range, blur, background, Poisson sampling. The PSF width and
    ``rho`` are kept at their tabulated values.
    """
    if name not in TABLE1:
        raise ValueError(f"unknown test problem {name!r}; choose from {sorted(TABLE1)}")
    spec = TABLE1[name]
    ref = _reference_image(name, spec.size, seed, reference)
    truth = rescale(downsample(ref, scale), *spec.value_range)
    h, w = truth.shape
    H = make_blur(w, h, spec.sigma_psf) if blur else IdentityOperator(h * w)
    mean = H.apply(truth.ravel()).reshape(h, w) + spec.bg
    data = simulate_poisson(mean, seed) if noise else mean
    return TestProblem(name, ImageGrid(truth), ImageGrid(data), H, spec.bg, spec.rho, seed, int(scale))


# ------------------------------------------------------------------ I/O


def _header_path(path):
    path = Path(path)
    return path.with_name(path.name + ".hdr")


def write_raw(path, img):
    """Little-endian float64 row-major pixels plus a ``<path>.hdr`` with width and height."""
    img = np.asarray(img, dtype="<f8")
    if img.ndim != 2:
        raise ValueError("expected a 2-D image")
    path = Path(path)
    path.write_bytes(np.ascontiguousarray(img).tobytes())
    _header_path(path).write_text(f"{img.shape[1]}\n{img.shape[0]}\n")


def read_raw(path) -> np.ndarray:
    path = Path(path)
    hdr = _header_path(path)
    if not hdr.exists():
        raise FileNotFoundError(f"missing header {hdr}")
    fields = hdr.read_text().split()
    if len(fields) < 2:
        raise ValueError(f"malformed header {hdr}")
    w, h = int(fields[0]), int(fields[1])
    a = np.fromfile(path, dtype="<f8")
    if a.size != w * h:
        raise ValueError(f"{path}: expected {w * h} pixels, found {a.size}")
    return a.reshape(h, w).astype(np.float64)


def read_pgm(path) -> np.ndarray:
    """Grayscale PGM (8 or 16 bit) as a float array."""
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im, dtype=np.float64)
