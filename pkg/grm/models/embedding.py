"""
Patch embedding

Template and search crops are cut into non-overlapping P×P patches in
row-major patch order, each patch flattened channel-first (c, y, x). A shared
linear projection maps patches to C-dim tokens, and each crop type adds its
own learnable position embedding.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Tuple

from grm.autograd import ops
from grm.autograd.tensor import Tensor
from grm.core.errors import ShapeError, UsageError


class TokenOrigin(str, Enum):
    TEMPLATE = "template"
    SEARCH = "search"


@dataclass
class TokenBuffer:
    """Token sequence plus the patch grid it came from"""
    tokens: Tensor
    origin: TokenOrigin
    grid: Tuple[int, int]

    def __post_init__(self) -> None:
        rows, cols = self.grid
        if self.tokens.ndim != 2 or rows * cols != self.tokens.shape[0]:
            raise ShapeError(f"{self.origin.value} tokens {self.tokens.shape} do not fill a {rows}×{cols} grid")

    @property
    def num_tokens(self) -> int:
        return self.tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]


def patchify(image: Tensor, patch_size: int) -> Tensor:
    """
    Split a 3×H×W image into N = (H/P)·(W/P) flattened patches

    Args:
        image: Crop of shape 3×H×W
        patch_size: Patch side P

    Returns:
        Tensor of shape N×3P², row i the i-th patch in row-major order

    Raises:
        ShapeError: P does not divide H or W
    """
    if image.ndim != 3:
        raise ShapeError(f"patchify expects a C×H×W image, got {image.shape}")
    channels, height, width = image.shape
    if patch_size <= 0 or height % patch_size or width % patch_size:
        raise ShapeError(f"patch size {patch_size} does not divide image {height}×{width}")
    rows, cols = height // patch_size, width // patch_size
    blocks = ops.reshape(image, (channels, rows, patch_size, cols, patch_size))
    blocks = ops.transpose(blocks, (1, 3, 0, 2, 4))
    return ops.reshape(blocks, (rows * cols, channels * patch_size * patch_size))


def embed_tokens(
    patches: Tensor,
    proj_W: Tensor,
    proj_b: Tensor,
    pos: Tensor,
    origin: TokenOrigin,
    grid: Tuple[int, int],
) -> TokenBuffer:
    """tokens = patches·W + b + pos"""
    expected = (patches.shape[0], proj_W.shape[1])
    if pos.shape != expected:
        raise ShapeError(f"{origin.value} position embedding {pos.shape} does not match tokens {expected}")
    tokens = ops.linear(patches, proj_W, proj_b) + pos
    return TokenBuffer(tokens=tokens, origin=origin, grid=grid)


def tokens_to_map(buffer: TokenBuffer) -> Tensor:
    """Search tokens N×C -> feature map C×rows×cols (token r·cols+c lands at [:, r, c])"""
    if buffer.origin != TokenOrigin.SEARCH:
        raise UsageError("only search tokens are mapped back to a feature map")
    rows, cols = buffer.grid
    return ops.reshape(ops.transpose(buffer.tokens, (1, 0)), (buffer.dim, rows, cols))


def map_to_tokens(feature_map: Tensor) -> TokenBuffer:
    """Inverse of tokens_to_map"""
    if feature_map.ndim != 3:
        raise ShapeError(f"expected a C×h×w map, got {feature_map.shape}")
    channels, rows, cols = feature_map.shape
    tokens = ops.transpose(ops.reshape(feature_map, (channels, rows * cols)), (1, 0))
    return TokenBuffer(tokens=tokens, origin=TokenOrigin.SEARCH, grid=(rows, cols))
