"""Masking benchmark rows and CSV output."""

import io

import numpy as np
import pytest

from grm.core.errors import UsageError
from grm.services.benchmark import BENCH_COLUMNS, BenchDivision, bench_mask, make_division, write_bench_csv


class TestMakeDivision:
    @pytest.mark.parametrize("kind,expected", [(BenchDivision.ALL_A, 1), (BenchDivision.ALL_S, 0)])
    def test_forced(self, kind, expected):
        D = make_division(kind, 6, np.random.default_rng(0))
        assert np.all(D.argmax(axis=1) == expected)

    def test_random_is_one_hot(self):
        D = make_division(BenchDivision.RANDOM, 50, np.random.default_rng(0))
        np.testing.assert_array_equal(D.sum(axis=1), 1.0)


class TestBenchMask:
    def test_two_rows(self):
        rows = bench_mask(n_z=4, n_x=9, heads=2, dim=8, iters=1, warmup=0)
        assert [r.variant for r in rows] == ["masked", "separate"]
        assert rows[1].speedup == pytest.approx(1.0)
        assert all(r.mean_ms > 0.0 and r.std_ms == 0.0 for r in rows)

    @pytest.mark.parametrize("kwargs", [
        dict(n_z=0, n_x=9, heads=2, dim=8, iters=1),
        dict(n_z=4, n_x=9, heads=2, dim=8, iters=0),
        dict(n_z=4, n_x=9, heads=3, dim=8, iters=1),
    ])
    def test_bad_sizes(self, kwargs):
        with pytest.raises(UsageError):
            bench_mask(**kwargs)

    def test_csv(self):
        rows = bench_mask(n_z=4, n_x=4, heads=1, dim=4, iters=2, division=BenchDivision.ALL_S, warmup=0)
        stream = io.StringIO()
        write_bench_csv(rows, stream)
        lines = stream.getvalue().splitlines()
        assert lines[0] == ",".join(BENCH_COLUMNS)
        assert len(lines) == 3
        assert lines[1].startswith("masked,")

