from dataclasses import dataclass

from .errors import ContractError, DimensionError
from .tensor import Tensor, as_tensor


@dataclass
class Batch:
    """Paired samples; row ``i`` of ``x`` pairs with row ``i`` of ``y``."""

    x: Tensor
    y: Tensor

    def __post_init__(self):
        self.x = as_tensor(self.x)
        self.y = as_tensor(self.y)
        if self.x.ndim != 2 or self.y.ndim != 2:
            raise DimensionError("batch x and y must be 2-d")
        if self.x.shape[0] != self.y.shape[0]:
            raise DimensionError(f"{self.x.shape[0]} x rows vs {self.y.shape[0]} y rows")
        if self.x.shape[0] < 2:
            raise ContractError("a batch needs at least two pairs")

    @property
    def n(self):
        return self.x.shape[0]
