"""Minimal dense tensor value and the numeric kernels the pipeline shares.

Storage is 32-bit IEEE-754, row-major; reductions accumulate in 64-bit.
Bilinear resizing uses the align-corners=false convention (sample positions
at pixel centers, clamped at the border); the exact formula is written out
in docs/bundle_format.md so independent implementations agree.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidShapeError, InvalidValueError


class Tensor:
    """Immutable float32 tensor. All values finite; shape product == payload size."""

    __slots__ = ("_array",)

    def __init__(self, data, shape=None):
        arr = np.asarray(data, dtype=np.float32)
        if shape is not None:
            arr = arr.reshape(shape)
        if arr.ndim == 0 or arr.size == 0:
            raise InvalidShapeError("tensor must have at least one element")
        if arr.ndim > 3:
            raise InvalidShapeError(f"rank {arr.ndim} unsupported (max 3)")
        if not np.isfinite(arr).all():
            raise InvalidValueError("tensor contains NaN or Inf")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        self._array = arr

    @property
    def array(self) -> np.ndarray:
        """Read-only view of the payload."""
        return self._array

    @property
    def shape(self) -> tuple[int, ...]:
        return self._array.shape

    @property
    def ndim(self) -> int:
        return self._array.ndim

    def __eq__(self, other) -> bool:
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.shape == other.shape and bool(
            np.array_equal(self._array, other._array)
        )

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    def tobytes(self) -> bytes:
        """Row-major little-endian float32 payload."""
        return self._array.astype("<f4", copy=False).tobytes()

    @classmethod
    def frombytes(cls, raw: bytes, shape) -> "Tensor":
        expected = 4 * int(np.prod(shape))
        if len(raw) != expected:
            raise InvalidShapeError(
                f"payload holds {len(raw)} bytes, shape {tuple(shape)} needs {expected}"
            )
        return cls(np.frombuffer(raw, dtype="<f4"), shape=shape)


def softmax_rows(m: Tensor, scale: float) -> Tensor:
    """Row-wise softmax of scale * m, with max subtraction for stability.

    Callers pass scale = 1/sqrt(d) to turn raw query-key products into
    attention rows. Each output row sums to 1 within float32 rounding.
    Entries are strictly positive up to storage precision: a ratio below
    the smallest float32 subnormal (logit gap beyond ~103) flushes to 0.
    """
    if m.ndim != 2:
        raise InvalidShapeError(f"softmax_rows needs a 2-D tensor, got {m.shape}")
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    z = m.array.astype(np.float64) * float(scale)
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return Tensor(e / e.sum(axis=1, keepdims=True))


def _axis_samples(src: int, dst: int):
    """Per-output-index (lo, hi, frac) for align-corners=false sampling."""
    pos = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    lo = np.clip(np.floor(pos), 0, src - 1).astype(np.intp)
    hi = np.minimum(lo + 1, src - 1)
    frac = np.clip(pos - lo, 0.0, 1.0)
    return lo, hi, frac


def _resize_hw(arr: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Bilinear resize over the trailing two axes of a (C, H, W) array.

    Interpolates in the input dtype; the blend is a convex combination, so
    float32 inputs stay accurate to ~1e-7.
    """
    _, src_h, src_w = arr.shape
    dst_h, dst_w = target
    ylo, yhi, fy = _axis_samples(src_h, dst_h)
    xlo, xhi, fx = _axis_samples(src_w, dst_w)
    fy = fy[:, None].astype(arr.dtype)
    fx = fx[None, :].astype(arr.dtype)

    top = arr[:, ylo, :]
    bot = arr[:, yhi, :]
    rows = top + (bot - top) * fy[None]
    left = rows[:, :, xlo]
    right = rows[:, :, xhi]
    return left + (right - left) * fx[None]


def resize_bilinear(m: Tensor, target: tuple[int, int]) -> Tensor:
    """Bilinear resize of a (H, W) map or a (C, H, W) stack of maps.

    Identity targets return the input unchanged (exact).
    """
    dst_h, dst_w = int(target[0]), int(target[1])
    if dst_h < 1 or dst_w < 1:
        raise InvalidShapeError(f"target dims must be positive, got {target}")
    if m.ndim == 2:
        if m.shape == (dst_h, dst_w):
            return m
        return Tensor(_resize_hw(m.array[None], (dst_h, dst_w))[0])
    if m.ndim == 3:
        if m.shape[1:] == (dst_h, dst_w):
            return m
        return Tensor(_resize_hw(m.array, (dst_h, dst_w)))
    raise InvalidShapeError(f"resize_bilinear needs 2-D or 3-D input, got {m.shape}")


def resize_pairwise(
    m: Tensor, source: tuple[int, int], target: tuple[int, int]
) -> Tensor:
    """Resize a (H*W) x (H*W) pixel-pair matrix to (H'*W') x (H'*W').

    The matrix is viewed as (H, W, H, W), bilinearly resized on both spatial
    pairs, and the rows of the result are renormalized to sum 1 so the output
    stays row-stochastic. Called with target == source it only renormalizes.
    """
    src_h, src_w = int(source[0]), int(source[1])
    dst_h, dst_w = int(target[0]), int(target[1])
    if dst_h < 1 or dst_w < 1:
        raise InvalidShapeError(f"target dims must be positive, got {target}")
    n = src_h * src_w
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidShapeError(f"pairwise map must be square, got {m.shape}")
    if m.shape[0] != n:
        raise InvalidShapeError(
            f"pairwise side {m.shape[0]} does not match source {source}"
        )

    if (dst_h, dst_w) == (src_h, src_w):
        out = m.array.astype(np.float64)
    else:
        # Key axes first: each source row-pixel keeps an (H, W) map to resize.
        a = m.array.reshape(n, src_h, src_w)
        a = _resize_hw(a, (dst_h, dst_w))            # (H*W, H', W')
        a = a.reshape(src_h, src_w, dst_h * dst_w)
        a = _resize_hw(a.transpose(2, 0, 1), (dst_h, dst_w))  # (H'*W', H', W')
        out = a.transpose(1, 2, 0).reshape(dst_h * dst_w, dst_h * dst_w)
        out = out.astype(np.float64)

    sums = out.sum(axis=1, keepdims=True)
    uniform = 1.0 / (dst_h * dst_w)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(sums > 0, out / sums, uniform)
    return Tensor(out)


def dot(a: Tensor, b: Tensor) -> float:
    """Inner product of two flat tensors, accumulated in 64-bit."""
    if a.ndim != 1 or b.ndim != 1:
        raise InvalidShapeError(
            f"dot needs flat tensors, got {a.shape} and {b.shape}"
        )
    if a.shape != b.shape:
        raise InvalidShapeError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    return float(np.dot(a.array.astype(np.float64), b.array.astype(np.float64)))
