"""
Fused-mask vs. category-wise attention timing

Both variants run forward passes without recording (no_grad) on the same
random tokens, projections and division. Parameter setup and the first
BENCH_WARMUP_ITERS iterations are not timed.
"""
import csv
import logging
import time
from enum import Enum
from typing import Callable, List, Optional, TextIO

import numpy as np

from grm.autograd.tensor import Tensor, no_grad
from grm.core.config import settings
from grm.core.errors import UsageError
from grm.models.relation import AttentionParams, build_mask, masked_mha, separate_mha_oracle
from grm.schemas.reports import BenchRow

logger = logging.getLogger(__name__)

BENCH_COLUMNS = ["variant", "mean_ms", "std_ms", "speedup"]


class BenchDivision(str, Enum):
    RANDOM = "random"
    ALL_A = "all_A"
    ALL_S = "all_S"


def make_division(kind: BenchDivision, num_search: int, rng: np.random.Generator) -> np.ndarray:
    if kind == BenchDivision.RANDOM:
        columns = rng.integers(0, 2, size=num_search)
    else:
        columns = np.full(num_search, 1 if kind == BenchDivision.ALL_A else 0)
    D = np.zeros((num_search, 2))
    D[np.arange(num_search), columns] = 1.0
    return D


def random_attention_params(dim: int, rng: np.random.Generator, std: float = 0.02) -> AttentionParams:
    tensors = []
    for _ in range(4):
        tensors.append(Tensor(rng.normal(0.0, std, size=(dim, dim))))
        tensors.append(Tensor(np.zeros(dim)))
    return AttentionParams(*tensors)


def _time(fn: Callable[[], object], iters: int, warmup: int) -> np.ndarray:
    for _ in range(warmup):
        fn()
    samples = np.empty(iters)
    for i in range(iters):
        start = time.perf_counter()
        fn()
        samples[i] = (time.perf_counter() - start) * 1000.0
    return samples


def bench_mask(
    n_z: int,
    n_x: int,
    heads: int,
    dim: int,
    iters: int,
    division: BenchDivision = BenchDivision.RANDOM,
    seed: int = 0,
    warmup: Optional[int] = None,
) -> List[BenchRow]:
    """
    Time masked_mha against separate_mha_oracle

    Returns:
        Two rows ("masked", "separate"); speedup is separate_mean / variant_mean
    """
    if min(n_z, n_x, heads, dim, iters) <= 0:
        raise UsageError("benchmark sizes and iteration count must be positive")
    if dim % heads:
        raise UsageError(f"heads {heads} does not divide width {dim}")
    warmup = settings.BENCH_WARMUP_ITERS if warmup is None else warmup

    rng = np.random.default_rng(seed)
    E_z = Tensor(rng.normal(size=(n_z, dim)))
    E_x = Tensor(rng.normal(size=(n_x, dim)))
    params = random_attention_params(dim, rng)
    D = make_division(division, n_x, rng)
    tokens = Tensor(np.concatenate([E_z.data, E_x.data], axis=0))
    mask = build_mask(D, n_z)

    with no_grad():
        masked = _time(lambda: masked_mha(tokens, mask, params, heads), iters, warmup)
        separate = _time(lambda: separate_mha_oracle(E_z, E_x, D, params, heads), iters, warmup)

    reference = float(separate.mean())
    rows = [
        BenchRow(variant=name, mean_ms=float(s.mean()), std_ms=float(s.std()), speedup=reference / float(s.mean()))
        for name, s in (("masked", masked), ("separate", separate))
    ]
    logger.info(f"bench-mask N_z={n_z} N_x={n_x} heads={heads} C={dim} division={division.value}: "
                f"masked {rows[0].mean_ms:.2f} ms, separate {rows[1].mean_ms:.2f} ms, "
                f"speedup {rows[0].speedup:.2f}x")
    return rows


def write_bench_csv(rows: List[BenchRow], stream: TextIO) -> None:
    writer = csv.DictWriter(stream, fieldnames=BENCH_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row.model_dump())
