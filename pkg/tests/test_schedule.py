import math

import pytest

from mitobench.errors import ValidationError
from mitobench.train.schedule import one_cycle_lr


class TestOneCycle:
    def test_peak_is_exact(self):
        peak = int(0.3 * 8000)
        assert one_cycle_lr(peak, 8000, 1e-4) == 1e-4

    def test_initial_value(self):
        # independent formula evaluation: max_lr / div_factor
        assert one_cycle_lr(0, 8000, 1e-4, div_factor=25.0) == pytest.approx(4e-6, rel=1e-12)

    def test_final_value_exact(self):
        assert one_cycle_lr(7999, 8000, 1e-4, final_div=1e4) == 1e-8

    def test_continuous(self):
        total = 500
        values = [one_cycle_lr(s, total, 1e-4) for s in range(total)]
        max_jump = max(abs(b - a) for a, b in zip(values, values[1:]))
        assert max_jump < 1e-4 * 0.05

    def test_piecewise_monotone(self):
        total = 1000
        peak = int(0.3 * total)
        values = [one_cycle_lr(s, total, 1e-4) for s in range(total)]
        assert all(b >= a for a, b in zip(values[: peak + 1], values[1 : peak + 1]))
        assert all(b <= a for a, b in zip(values[peak:], values[peak + 1 :]))
        assert max(values) == 1e-4

    def test_zero_warmup(self):
        assert one_cycle_lr(0, 100, 1e-3, pct_start=0.0) == 1e-3

    def test_out_of_range(self):
        with pytest.raises(ValidationError):
            one_cycle_lr(-1, 100, 1e-4)
        with pytest.raises(ValidationError):
            one_cycle_lr(100, 100, 1e-4)

    def test_bad_parameters(self):
        with pytest.raises(ValidationError):
            one_cycle_lr(0, 0, 1e-4)
        with pytest.raises(ValidationError):
            one_cycle_lr(0, 10, -1e-4)

    def test_anneal_matches_cosine_blend(self):
        total, peak = 1001, int(0.3 * 1001)
        mid = peak + (total - 1 - peak) // 2
        lr = one_cycle_lr(mid, total, 1e-4)
        lo, hi = 1e-8, 1e-4
        assert lo < lr < hi
        w = (1 + math.cos(math.pi * (mid - peak) / (total - 1 - peak))) / 2
        assert lr == pytest.approx(hi * w + lo * (1 - w), rel=1e-12)
