"""Dense row-major tensor container used by every numeric operation.

A :class:`Tensor` wraps a C-contiguous numpy buffer restricted to the two
precisions the package uses: single (training and inference) and double
(verification oracles and gradient checks).  Operations never mutate their
inputs; the only sanctioned mutation is the optimizer writing into weight
buffers it owns.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

PRECISION_DTYPES = {"single": np.float32, "double": np.float64}
_DTYPE_PRECISIONS = {np.dtype(np.float32): "single", np.dtype(np.float64): "double"}


class ShapeError(ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class Tensor:
    """Dense multi-axis array; shape axes are all >= 1, layout is row-major."""

    __slots__ = ("_data",)

    def __init__(self, data, precision: str | None = None) -> None:
        if isinstance(data, Tensor):
            data = data._data
        if precision is not None:
            if precision not in PRECISION_DTYPES:
                raise ValueError(f"unknown precision: {precision!r}")
            dtype = PRECISION_DTYPES[precision]
        else:
            existing = getattr(data, "dtype", None)
            dtype = existing if existing in _DTYPE_PRECISIONS else np.float32
        arr = np.ascontiguousarray(data, dtype=dtype)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.size == 0 or min(arr.shape) < 1:
            raise ShapeError(f"axis lengths must all be >= 1, got shape {arr.shape}")
        self._data = arr

    @classmethod
    def zeros(cls, shape: Sequence[int], precision: str = "single") -> "Tensor":
        return cls(np.zeros(tuple(shape), dtype=PRECISION_DTYPES[precision]))

    @classmethod
    def ones(cls, shape: Sequence[int], precision: str = "single") -> "Tensor":
        return cls(np.ones(tuple(shape), dtype=PRECISION_DTYPES[precision]))

    @classmethod
    def from_flat(
        cls, shape: Sequence[int], values: Iterable[float], precision: str = "single"
    ) -> "Tensor":
        """Build from a flat row-major buffer; length must equal product(shape)."""
        shape = tuple(int(s) for s in shape)
        flat = np.asarray(list(values) if not isinstance(values, np.ndarray) else values)
        expected = int(np.prod(shape)) if shape else 0
        if flat.size != expected:
            raise ShapeError(
                f"flat buffer has {flat.size} elements, shape {shape} needs {expected}"
            )
        return cls(flat.reshape(shape), precision=precision)

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    @property
    def precision(self) -> str:
        return _DTYPE_PRECISIONS[self._data.dtype]

    @property
    def dtype(self) -> np.dtype:
        return self._data.dtype

    def at(self, *index: int) -> float:
        """Element at a multi-index; equals the row-major buffer entry."""
        return float(self._data[tuple(index)])

    def astype(self, precision: str) -> "Tensor":
        return Tensor(self._data, precision=precision)

    def copy(self) -> "Tensor":
        return Tensor(self._data.copy())

    def tolist(self):
        return self._data.tolist()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, precision={self.precision})"


def as_tensor(value, precision: str | None = None) -> Tensor:
    return value if isinstance(value, Tensor) and precision is None else Tensor(value, precision)


def _as_triple(value, name: str) -> tuple[int, int, int]:
    if isinstance(value, int):
        return (value, value, value)
    triple = tuple(int(v) for v in value)
    if len(triple) != 3:
        raise ValueError(f"{name} must be an int or a 3-tuple, got {value!r}")
    return triple


@dataclass(frozen=True)
class ConvParams:
    """Stride and zero-fill padding for the three spatial axes (depth, height, width)."""

    stride: tuple[int, int, int] = (1, 1, 1)
    padding: tuple[int, int, int] = (0, 0, 0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "stride", _as_triple(self.stride, "stride"))
        object.__setattr__(self, "padding", _as_triple(self.padding, "padding"))
        if min(self.stride) < 1:
            raise ValueError(f"stride must be positive, got {self.stride}")
        if min(self.padding) < 0:
            raise ValueError(f"padding must be non-negative, got {self.padding}")


def conv_output_axis(in_len: int, kernel: int, stride: int, pad: int) -> int:
    """Closed-form output length: floor((in + 2*pad - kernel)/stride) + 1."""
    out = (in_len + 2 * pad - kernel) // stride + 1
    if out < 1:
        raise ShapeError(
            f"degenerate output axis: in={in_len}, kernel={kernel}, stride={stride}, pad={pad}"
        )
    return out
