import io
from fractions import Fraction as F
from math import comb

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from alleletree.exact import (
    ConvergenceError,
    convolution_power,
    enumerate_genealogies,
    enumerate_two_levels,
    joint_law_T0_M1,
    phi_fixed_point,
)
from alleletree.offspring import (
    MarkedOffspringLaw,
    OffspringLaw,
    binary_law,
    binomial_mark,
    capped_geometric_law,
    classify,
)


def test_first_power_is_the_law(binary_half):
    arr, lost = convolution_power(binary_half, 1)
    assert lost == 0
    assert {(k, l): arr[k, l] for k, l in zip(*np.nonzero(arr != 0))} == binary_half.joint_pmf


def test_second_power_by_double_sum(geometric_quarter):
    law = geometric_quarter
    arr, _ = convolution_power(law, 2)
    assert convolution_power(binomial_mark(binary_law(), F(1, 2)), 2)[0][0, 0] == F(1, 4)
    direct = {}
    for (k1, l1), v1 in law.joint_pmf.items():
        for (k2, l2), v2 in law.joint_pmf.items():
            direct[(k1 + k2, l1 + l2)] = direct.get((k1 + k2, l1 + l2), 0) + v1 * v2
    assert all(arr[k, l] == v for (k, l), v in direct.items())
    flt, _ = convolution_power(law.as_float(), 2)
    assert max(abs(flt[k, l] - float(v)) for (k, l), v in direct.items()) <= 1e-14


def test_support_cap_reports_discarded_mass(binary_half):
    arr, lost = convolution_power(binary_half, 4, support_cap=3)
    full, _ = convolution_power(binary_half, 4)
    assert lost == sum(full[4:].ravel().tolist(), F(0))
    assert (arr == full[:4]).all()


def test_small_table_values(binary_half):
    t = joint_law_T0_M1(binary_half, 1, 8)
    assert t.prob(1, 0) == F(1, 2)
    assert t.prob(1, 2) == F(1, 8)
    assert joint_law_T0_M1(binary_half, 2, 8).table[1].sum() == 0
    p0 = joint_law_T0_M1(binomial_mark(binary_law(), 0), 1, 8)
    assert p0.prob(5, 0) == F(1, 16)


def test_enumeration_examples():
    childless = MarkedOffspringLaw({(0, 0): 1})
    assert enumerate_genealogies(childless, 2, 6).entries() == {(2, 0): 1}
    p0 = enumerate_genealogies(binomial_mark(binary_law(), 0), 1, 5)
    assert p0.marginal_T0()[3] == 1 / 8
    assert p0.rational and p0.table[3].sum() == F(1, 8)


def test_enumeration_guard(binary_half):
    with pytest.raises(ValueError):
        enumerate_genealogies(binary_half, 1, 17)


def test_empty_table_when_cap_below_ancestors(binary_half):
    t = joint_law_T0_M1(binary_half, 3, 2)
    assert t.entries() == {}
    assert t.truncation_bound == 1


LAWS = {
    "binary": binary_law,
    "geometric": capped_geometric_law,
}


@pytest.mark.parametrize("base", sorted(LAWS))
@pytest.mark.parametrize("p", [F(0), F(1, 4), F(1, 2)])
@pytest.mark.parametrize("a", [1, 2])
def test_formula_equals_enumeration_exactly(base, p, a):
    law = binomial_mark(LAWS[base](), p)
    formula = joint_law_T0_M1(law, a, 8)
    oracle = enumerate_genealogies(law, a, 8)
    assert formula.exactly_equal(oracle)
    f = joint_law_T0_M1(law.as_float(), a, 8)
    o = enumerate_genealogies(law.as_float(), a, 8)
    assert f.max_abs_diff(o) <= 1e-12


@pytest.mark.parametrize("n", range(1, 12))
def test_dwass_marginal(n):
    t = joint_law_T0_M1(binomial_mark(binary_law(), 0), 1, 12)
    # (1/n) P(n steps in {0, 2} sum to n - 1)
    expected = F(comb(n, (n - 1) // 2), n * 2**n) if n % 2 == 1 else F(0)
    assert t.table[n].sum() == expected


def test_total_plus_truncation_is_one(geometric_quarter):
    t = joint_law_T0_M1(geometric_quarter.as_float(), 2, 150)
    assert abs(t.total() + t.truncation_bound - 1) <= 1e-9
    assert np.all(t.as_float() >= 0)


def test_mean_of_mutants_matches_clone_mutant_identity():
    law = MarkedOffspringLaw({(0, 0): F(1, 2), (1, 0): F(1, 4), (1, 1): F(1, 4)})
    t = joint_law_T0_M1(law.as_float(), 1, 200)
    target = float(classify(law).mutant_process_mean)
    assert t.truncation_bound < 1e-12
    assert abs(t.mean_M1() - target) <= 1e-9


def test_csv_header_and_fractions(binary_half):
    buf = io.StringIO()
    joint_law_T0_M1(binary_half, 1, 3).write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0].startswith("# schema=1 ancestors=1 n_max=3 law=")
    assert "truncation_mass=" in lines[0]
    assert lines[1] == "n,l,probability"
    assert "1,0,1/2" in lines


def test_phi_at_one(geometric_quarter):
    assert abs(phi_fixed_point(geometric_quarter, 1.0, 1.0) - 1) <= 1e-9


def test_phi_matches_series(binary_half):
    series = joint_law_T0_M1(binary_half.as_float(), 1, 60).pgf(0.5, 0.5)
    assert abs(phi_fixed_point(binary_half, 0.5, 0.5) - series) <= 1e-8


@pytest.mark.parametrize("y", [0.2, 0.7, 1.0])
def test_phi_small_x(geometric_quarter, y):
    x = 1e-6
    g0 = geometric_quarter.pgf(0.0, y)
    assert abs(phi_fixed_point(geometric_quarter, x, y) / x - g0) <= 1e-5


def test_phi_monotone_in_x(binary_half):
    xs = np.linspace(0.05, 1, 12)
    vals = [phi_fixed_point(binary_half, x, 0.6) for x in xs]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_phi_defective_regime():
    # critical clones: phi(1, y) < 1 for y < 1 still comes from the minimal root
    law = binomial_mark(binary_law(), 0)
    assert abs(phi_fixed_point(law, 0.5, 1.0) - (1 - np.sqrt(0.75)) / 0.5) <= 1e-10


def test_phi_domain_and_cap(binary_half):
    with pytest.raises(ValueError):
        phi_fixed_point(binary_half, 0.0, 0.5)
    with pytest.raises(ConvergenceError):
        phi_fixed_point(binomial_mark(binary_law(), 0), 1.0, 1.0, max_iter=10)


def test_two_level_oracle_sums_to_truncated_one(binary_half):
    two = enumerate_two_levels(binary_half, 1, 10)
    total = sum(two.values())
    assert 0 < 1 - total < 1
    # first two coordinates marginalise to the one-level oracle where T_1 cannot exceed the cap
    assert sum(v for (t0, m1, _, _), v in two.items() if (t0, m1) == (1, 0)) == F(1, 2)


@given(st.lists(st.integers(1, 9), min_size=2, max_size=5), st.integers(1, 2))
def test_formula_equals_enumeration_random_laws(weights, a):
    total = sum(weights)
    base = OffspringLaw.from_mapping({k: F(w, total) for k, w in enumerate(weights)})
    law = binomial_mark(base, F(1, 3))
    assert joint_law_T0_M1(law, a, 6).exactly_equal(enumerate_genealogies(law, a, 6))
