import csv
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cavityspdc.exceptions import ConfigError
from cavityspdc.filters import (
    EtalonSpec,
    EtalonStack,
    design_stack,
    etalon_fsr,
    etalon_transmission,
    filtered_ratio,
    leakage_table,
    reference_stack,
    stack_transmission,
    write_transmission_csv,
)
from cavityspdc.spectrum import CavityConfig, build_comb, multimode_ratio

C = 299_792_458.0
COMB = build_comb(CavityConfig())
REF_STACK = reference_stack()


def _airy(delta_mhz, length_mm, n=1.45, finesse=25.0, peak=0.4**0.2):
    fsr_mhz = C / (2 * n * length_mm * 1e-3) / 1e6
    return peak / (1 + (2 * finesse / math.pi) ** 2 * math.sin(math.pi * delta_mhz / fsr_mhz) ** 2)


def _ratio_loop(lengths, survival="single"):
    t0 = math.prod(_airy(0.0, L) for L in lengths)
    total = []
    for p in COMB.nondegenerate:
        ts = math.prod(_airy(p.offset_signal, L) for L in lengths)
        ti = math.prod(_airy(p.offset_idler, L) for L in lengths)
        f = 0.5 * (ts + ti) / t0 if survival == "single" else ts * ti / t0**2
        total.append(p.relative_weight * f)
    return math.fsum(total)


def test_fsr_values():
    # c = 299792458 m/s; rounder figures follow from c = 3e8
    assert etalon_fsr(EtalonSpec(5.4)) == pytest.approx(19.14384, abs=1e-5)
    assert etalon_fsr(EtalonSpec(2.1)) == pytest.approx(49.22700, abs=1e-5)
    assert etalon_fsr(EtalonSpec(5.4)) == pytest.approx(19.16, rel=2e-3)
    assert etalon_fsr(EtalonSpec(C / 2 * 1e3, refractive_index=1.0)) * 1e9 == pytest.approx(1.0)


def test_transmission_on_peak_half_and_full_fsr():
    e = EtalonSpec(5.4, detuning=120.0)
    fsr = e.fsr * 1e3
    assert etalon_transmission(e, 120.0) == pytest.approx(e.peak_transmittance, rel=1e-15)
    assert etalon_transmission(e, 120.0 + fsr / 2) == pytest.approx(e.peak_transmittance / 254.30296, rel=1e-7)
    assert etalon_transmission(e, 120.0 + fsr) == pytest.approx(e.peak_transmittance, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(d=st.floats(-5e4, 5e4), length=st.floats(0.5, 20))
def test_transmission_periodic_and_symmetric(d, length):
    e = EtalonSpec(length)
    fsr = e.fsr * 1e3
    assert etalon_transmission(e, d + fsr) == pytest.approx(etalon_transmission(e, d), rel=1e-6, abs=1e-12)
    assert etalon_transmission(e, -d) == pytest.approx(etalon_transmission(e, d), rel=1e-9)
    assert stack_transmission(REF_STACK, d) <= REF_STACK.peak_transmission + 1e-15


def test_effective_finesse_from_reflectivity():
    assert EtalonSpec(5.4, finesse_override=None).effective_finesse == pytest.approx(29.8, abs=0.05)
    assert EtalonSpec(5.4).effective_finesse == 25.0


def test_stack_peak_and_ideal():
    assert stack_transmission(REF_STACK, 0.0) == pytest.approx(0.40, rel=1e-12)
    assert REF_STACK.peak_transmission == pytest.approx(0.40, rel=1e-12)
    assert stack_transmission(EtalonStack((EtalonSpec(5.4, peak_transmittance=1.0),)), 0.0) == 1.0
    with pytest.raises(ValueError):
        stack_transmission(EtalonStack(), 0.0)


def test_filtered_ratio_matches_loop_oracle():
    assert filtered_ratio(COMB, REF_STACK) == pytest.approx(_ratio_loop(REF_STACK.lengths), rel=1e-10)
    assert filtered_ratio(COMB, REF_STACK, "pair") == pytest.approx(_ratio_loop(REF_STACK.lengths, "pair"), rel=1e-10)


def test_filtered_ratio_published_value():
    mu_f = filtered_ratio(COMB, REF_STACK)
    assert 0.1 <= mu_f / 5.4e-6 <= 10
    assert mu_f == pytest.approx(5.3685e-6, rel=1e-4)


def test_pair_survival_is_far_below():
    assert filtered_ratio(COMB, REF_STACK, "pair") == pytest.approx(2.49e-8, rel=1e-2)


def test_bypass_and_degenerate_only():
    mu = multimode_ratio(COMB)
    assert filtered_ratio(COMB, None) == mu
    assert filtered_ratio(COMB, EtalonStack()) == mu
    assert filtered_ratio(build_comb(CavityConfig(mode_count_n=0)), REF_STACK) == 0.0


def test_unknown_survival_mode():
    with pytest.raises(ValueError):
        filtered_ratio(COMB, REF_STACK, "both")


def test_filtered_below_unfiltered():
    assert filtered_ratio(COMB, REF_STACK) <= multimode_ratio(COMB)


@pytest.mark.parametrize("extra", [2.1, 5.4, 7.5, 3.3, 10.0])
def test_adding_tuned_etalon_never_increases(extra):
    more = EtalonStack(REF_STACK.etalons + (EtalonSpec(extra),))
    for mode in ("single", "pair"):
        assert filtered_ratio(COMB, more, mode) <= filtered_ratio(COMB, REF_STACK, mode)


def test_leakage_table_sums_to_ratio():
    table = leakage_table(COMB, REF_STACK)
    assert [row[0] for row in table] == list(range(1, 101))
    assert math.fsum(row[2] for row in table) == pytest.approx(filtered_ratio(COMB, REF_STACK), rel=1e-12)
    assert math.fsum(row[1] for row in table) == pytest.approx(multimode_ratio(COMB), rel=1e-12)


def test_design_single_candidate():
    best = design_stack(COMB, [5.4], 5)
    assert best.lengths == (5.4,) * 5


def test_design_matches_brute_force():
    cands = [5.4, 7.5, 2.1]
    combos = list(itertools.combinations_with_replacement(sorted(cands), 5))
    assert len(combos) == 21
    oracle = min(combos, key=lambda c: (_ratio_loop(c), c))
    best = design_stack(COMB, cands, 5)
    assert best.lengths == oracle
    assert filtered_ratio(COMB, best) <= filtered_ratio(COMB, REF_STACK)


def test_design_permutation_invariant():
    ref = design_stack(COMB, [5.4, 7.5, 2.1], 3)
    for perm in itertools.permutations([5.4, 7.5, 2.1]):
        assert design_stack(COMB, perm, 3) == ref


def test_design_errors():
    with pytest.raises(ValueError):
        design_stack(COMB, [5.4], 0)
    with pytest.raises(ValueError):
        design_stack(COMB, [], 2)
    with pytest.raises(ValueError):
        design_stack(COMB, [5.4], 5, budget=0.9)


@pytest.mark.parametrize(
    "kwargs",
    [dict(length=0), dict(length=1, refractive_index=0.9), dict(length=1, surface_reflectivity=1.0),
     dict(length=1, peak_transmittance=0.0), dict(length=1, finesse_override=-2.0)],
)
def test_spec_validation(kwargs):
    with pytest.raises(ValueError):
        EtalonSpec(**kwargs)


def test_config_round_trip():
    stack = EtalonStack((EtalonSpec(5.4, detuning=12.5), EtalonSpec(2.1, finesse_override=None)))
    entries = stack.to_config()
    assert entries["filter.etalon.1.finesse"] == "none"
    assert EtalonStack.from_config(entries) == stack


def test_config_rejects_gaps_and_unknown_fields():
    with pytest.raises(ConfigError, match="filter.etalon.0"):
        EtalonStack.from_config({"filter.etalon.1.length_mm": "5.4"})
    with pytest.raises(ConfigError, match="filter.etalon.0.colour"):
        EtalonStack.from_config({"filter.etalon.0.colour": "red"})
    with pytest.raises(ConfigError, match="filter.etalon.0.R"):
        EtalonStack.from_config({"filter.etalon.0.length_mm": "5.4", "filter.etalon.0.R": "1.5"})


def test_transmission_csv(tmp_path):
    path = tmp_path / "t.csv"
    write_transmission_csv(REF_STACK, path, points=101)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["detuning_MHz", "T"]
    values = np.array(rows[1:], dtype=float)
    assert values.shape == (101, 2)
    assert values[:, 1].max() == pytest.approx(0.4, rel=1e-12)
