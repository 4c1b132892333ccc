from fractions import Fraction as F
from math import comb, inf

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from alleletree.offspring import (
    MarkedOffspringLaw,
    OffspringLaw,
    binary_law,
    binomial_mark,
    capped_geometric_law,
    classify,
    parse_probability,
    sample_offspring,
)
from alleletree.stats import binomial_se, chi2_gof


def test_binary_p0_has_no_mutants():
    law = binomial_mark(binary_law(), 0)
    assert law.joint_pmf == {(0, 0): F(1, 2), (2, 0): F(1, 2)}


def test_binary_half_by_hand():
    law = binomial_mark(binary_law(), F(1, 2))
    assert law.joint_pmf == {(0, 0): F(1, 2), (2, 0): F(1, 8), (1, 1): F(1, 4), (0, 2): F(1, 8)}
    # the k+l=2 block is Binomial(2, 1/2) scaled by 1/2
    block = [law.prob(2 - l, l) for l in range(3)]
    assert block == [F(1, 2) * comb(2, l) / 4 for l in range(3)]


def test_all_children_mutant():
    law = binomial_mark(OffspringLaw.from_mapping({1: 1}), 1)
    assert law.joint_pmf == {(0, 1): 1}


@pytest.mark.parametrize("p", [-0.1, 1.5, float("nan")])
def test_bad_mutation_probability(p):
    with pytest.raises(ValueError):
        binomial_mark(binary_law(), p)


def test_invalid_pmfs_rejected():
    with pytest.raises(ValueError):
        OffspringLaw.from_mapping({0: 0.5, 2: 0.4})
    with pytest.raises(ValueError):
        MarkedOffspringLaw({})
    with pytest.raises(ValueError):
        MarkedOffspringLaw({(0, 0): 1.5, (1, 0): -0.5})


def test_capped_geometric_is_critical():
    base = capped_geometric_law()
    assert sum(base.pmf) == 1
    assert base.mean() == 1
    assert base.pmf[6] == F(6, 321)


def test_mutant_process_mean_is_one_at_p_quarter():
    cl = classify(binomial_mark(binary_law(), F(1, 4)))
    assert cl.total_mean == 1
    assert cl.mutant_process_mean == 1
    assert cl.regime_flag == "critical"


def test_clone_critical_gives_infinite_mean():
    cl = classify(binomial_mark(binary_law(), 0))
    assert cl.clone_mean == 1
    assert cl.mutant_process_mean == inf
    assert "no-mutants" in cl.degenerate


def _half_quarter_law():
    # clone mean 1/2, mutant mean 1/4
    return MarkedOffspringLaw({(0, 0): F(1, 2), (1, 0): F(1, 4), (1, 1): F(1, 4)})


def test_mutant_mean_from_clone_and_mutant_means():
    cl = classify(_half_quarter_law())
    assert (cl.clone_mean, cl.mutant_mean) == (F(1, 2), F(1, 4))
    assert cl.mutant_process_mean == F(1, 2)
    assert cl.regime_flag == "subcritical"


def test_mutant_mean_monte_carlo():
    from alleletree.genealogy import sample_root_pairs

    rng = np.random.default_rng(3)
    _, M, _ = sample_root_pairs(_half_quarter_law(), np.ones(10**6, dtype=np.int64), rng)
    se = M.std() / 1e3
    assert abs(M.mean() - 0.5) <= 3 * se


def test_degenerate_sampling():
    law = MarkedOffspringLaw({(0, 1): 1})
    rng = np.random.default_rng(0)
    assert sample_offspring(law, rng) == (0, 1)
    k, l = sample_offspring(law, rng, size=100)
    assert set(k) == {0} and set(l) == {1}


def test_sampled_frequency_of_one_one():
    law = binomial_mark(binary_law(), F(1, 2))
    k, l = sample_offspring(law, np.random.default_rng(1), size=10**6)
    freq = np.mean((k == 1) & (l == 1))
    assert abs(freq - 0.25) <= 3 * binomial_se(0.25, 10**6)


def test_sampling_chi_square(geometric_quarter):
    law = geometric_quarter
    k, l = sample_offspring(law, np.random.default_rng(2), size=10**6)
    cells = sorted(law.joint_pmf)
    obs = [np.count_nonzero((k == a) & (l == b)) for a, b in cells]
    assert chi2_gof(obs, [float(law.joint_pmf[c]) for c in cells]).pvalue > 0.01


def test_sampling_is_deterministic(binary_half):
    a = sample_offspring(binary_half, np.random.default_rng(9), size=50)
    b = sample_offspring(binary_half, np.random.default_rng(9), size=50)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_parse_probability():
    assert parse_probability("1/4") == F(1, 4)
    assert parse_probability("0.25") == 0.25
    assert parse_probability(1) == F(1)
    with pytest.raises(ValueError):
        parse_probability(True)


pmfs = st.lists(st.integers(0, 20), min_size=1, max_size=8).filter(lambda w: sum(w) > 0)


@given(pmfs, st.fractions(0, 1))
def test_marking_preserves_total_marginal(weights, p):
    total = sum(weights)
    base = OffspringLaw.from_mapping({k: F(w, total) for k, w in enumerate(weights) if w})
    law = binomial_mark(base, p)
    assert sum(law.joint_pmf.values()) == 1
    marginal = law.total_marginal()
    assert all(marginal.get(k, 0) == base.pmf[k] for k in range(len(base.pmf)))


@given(pmfs, st.floats(0, 1))
def test_marking_float_within_tolerance(weights, p):
    total = sum(weights)
    base = OffspringLaw.from_mapping({k: w / total for k, w in enumerate(weights) if w})
    law = binomial_mark(base, p)
    assert abs(sum(law.joint_pmf.values()) - 1) <= 1e-12
    marginal = law.total_marginal()
    assert max(abs(marginal.get(k, 0) - base.pmf[k]) for k in range(len(base.pmf))) <= 1e-12


@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4), st.integers(1, 9)), min_size=1, max_size=6))
def test_classify_mean_identity_is_exact(cells):
    joint = {}
    for k, l, w in cells:
        joint[(k, l)] = joint.get((k, l), 0) + w
    total = sum(joint.values())
    law = MarkedOffspringLaw({kl: F(w, total) for kl, w in joint.items()})
    cl = classify(law)
    if cl.clone_mean < 1 and cl.mutant_mean > 0:
        assert cl.mutant_process_mean == cl.mutant_mean / (1 - cl.clone_mean)
