import csv
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cavityspdc.spectrum import (
    Branch,
    CavityConfig,
    build_comb,
    cavity_linewidth,
    mode_weight,
    multimode_ratio,
    round_trip_time,
)

DEFAULTS = CavityConfig()


def _mp_weight(m, finesse=100, d_omega=13, omega=1468):
    mpmath.mp.dps = 40
    s = mpmath.sin(mpmath.pi * m * mpmath.mpf(d_omega) / omega)
    return 4 / (1 + (4 * mpmath.mpf(finesse) ** 2 / mpmath.pi**2) * s**2)


# frozen high-precision values
W1 = 0.967107044
PARTIAL_N3 = 1.399793487


def test_weight_m1_matches_high_precision():
    assert mode_weight(1, DEFAULTS) == pytest.approx(W1, abs=1e-9)
    assert mode_weight(1, DEFAULTS) == pytest.approx(float(_mp_weight(1)), rel=1e-12)


def test_weight_is_four_on_walkoff_revival():
    cfg = CavityConfig(fsr_h=1300.0, fsr_v=1313.0)  # omega/d_omega = 100
    assert mode_weight(100, cfg) == pytest.approx(4.0, abs=1e-12)


def test_weight_vanishes_for_huge_finesse():
    assert mode_weight(1, CavityConfig(finesse=1e6)) < 1e-6


def test_weight_rejects_bad_index():
    with pytest.raises(ValueError):
        mode_weight(0, DEFAULTS)
    with pytest.raises(ValueError):
        mode_weight(1.5, DEFAULTS)


def test_weight_vectorized_matches_scalar():
    m = np.arange(1, 30)
    np.testing.assert_allclose(mode_weight(m, DEFAULTS), [mode_weight(int(k), DEFAULTS) for k in m], rtol=0, atol=0)


def test_weight_periodic_and_bounded():
    cfg = CavityConfig(fsr_h=1300.0, fsr_v=1313.0)
    m = np.arange(1, 101)
    w = mode_weight(m, cfg)
    np.testing.assert_allclose(w, mode_weight(m + 100, cfg), rtol=1e-9)
    assert np.all(w > 0) and np.all(w <= 4.0 + 1e-15)


def test_comb_sizes():
    assert len(build_comb(DEFAULTS)) == 401
    assert len(build_comb(CavityConfig(mode_count_n=1))) == 5
    assert len(build_comb(CavityConfig(mode_count_n=0))) == 1


def test_comb_structure():
    comb = build_comb(DEFAULTS)
    degenerate = [p for p in comb.pairs if p.branch is Branch.DEGENERATE]
    assert len(degenerate) == 1 and degenerate[0].relative_weight == 1.0
    for m in (1, 50, 100):
        assert sum(p.index_m == m for p in comb.pairs) == 4
    hp = next(p for p in comb.pairs if p.branch is Branch.H_COMB_PLUS and p.index_m == 1)
    assert hp.offset_signal == 1468.0


def test_energy_conservation_exact():
    for p in build_comb(DEFAULTS).pairs:
        assert p.offset_signal + p.offset_idler == 0


def test_branch_shares_sum_to_weight():
    comb = build_comb(DEFAULTS)
    for m in (1, 7, 100):
        shares = [p.relative_weight for p in comb.pairs if p.index_m == m and p.branch is not Branch.DEGENERATE]
        assert math.fsum(shares) == pytest.approx(mode_weight(m, DEFAULTS), rel=1e-15)


def test_multimode_ratio_published_value():
    assert multimode_ratio(build_comb(DEFAULTS)) == pytest.approx(1.87, abs=0.05)


def test_multimode_ratio_partial_sum_oracle():
    mu3 = multimode_ratio(build_comb(CavityConfig(mode_count_n=3)))
    assert mu3 == pytest.approx(PARTIAL_N3, abs=1e-9)
    assert mu3 == pytest.approx(float(sum(_mp_weight(m) for m in (1, 2, 3))), rel=1e-12)


def test_multimode_ratio_full_sum_oracle():
    oracle = float(mpmath.fsum(_mp_weight(m) for m in range(1, 101)))
    assert multimode_ratio(build_comb(DEFAULTS)) == pytest.approx(oracle, rel=1e-12)


def test_multimode_ratio_empty_comb():
    assert multimode_ratio(build_comb(CavityConfig(mode_count_n=0))) == 0.0


@pytest.mark.parametrize("ref", ["h", "v", "mean"])
def test_omega_switch_stays_within_tolerance(ref):
    assert multimode_ratio(build_comb(CavityConfig(omega_reference=ref))) == pytest.approx(1.87, abs=0.05)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(0, 150))
def test_ratio_monotone_in_n(n):
    a = multimode_ratio(build_comb(CavityConfig(mode_count_n=n)))
    b = multimode_ratio(build_comb(CavityConfig(mode_count_n=n + 1)))
    assert b >= a


@settings(max_examples=30, deadline=None)
@given(finesse=st.floats(2, 500), n=st.integers(1, 60))
def test_doubling_finesse_lowers_ratio(finesse, n):
    # n < omega/d_omega keeps every sin^2 term nonzero
    lo = multimode_ratio(build_comb(CavityConfig(finesse=2 * finesse, mode_count_n=n)))
    hi = multimode_ratio(build_comb(CavityConfig(finesse=finesse, mode_count_n=n)))
    assert lo < hi


def test_linewidth_and_round_trip():
    assert cavity_linewidth(DEFAULTS) == pytest.approx(14.68)
    assert cavity_linewidth(CavityConfig(fsr_h=1468, finesse=1468)) == pytest.approx(1.0)
    assert round_trip_time(DEFAULTS) == pytest.approx(678.196, abs=1e-3)
    assert round_trip_time(CavityConfig(fsr_h=1000, fsr_v=1000)) == pytest.approx(1000.0)
    assert round_trip_time(CavityConfig(fsr_h=2000, fsr_v=2000)) == pytest.approx(500.0)


@pytest.mark.parametrize(
    "kwargs",
    [dict(fsr_h=0), dict(fsr_v=-1), dict(finesse=1.0), dict(mode_count_n=-1), dict(omega_reference="x")],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        CavityConfig(**kwargs)


def test_comb_csv(tmp_path):
    path = tmp_path / "comb.csv"
    build_comb(CavityConfig(mode_count_n=2)).to_csv(path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["m", "branch", "offset_signal_MHz", "relative_weight"]
    assert len(rows) == 1 + 9
