from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from alleletree.exact import enumerate_genealogies, joint_law_T0_M1
from alleletree.genealogy import (
    Caps,
    TruncationError,
    allele_tree_from_genealogy,
    branching_resample_check,
    sample_census,
    sample_pattern,
    sample_root_pairs,
    simulate_allele_tree,
)
from alleletree.offspring import MarkedOffspringLaw, binary_law, binomial_mark
from alleletree.stats import chi2_gof


def leaf():
    return []


def figure1_forest():
    # ancestral family of 4 with three mutant children founding families of sizes 3, 2 and 1
    x = [(False, [(True, leaf())]), (False, leaf())]  # size 3, one mutant child
    y = [(False, leaf())]  # size 2
    z = [(True, leaf())]  # size 1, one mutant child
    b = [(False, leaf()), (True, y)]
    c = [(True, z)]
    a = [(False, b), (False, c), (True, x)]
    return [a]


def test_figure1_tree_of_alleles():
    tree, census = allele_tree_from_genealogy(figure1_forest())
    assert tree.rows() == [
        ("/", 4, 3), ("/1", 3, 1), ("/1/1", 1, 0), ("/2", 2, 0), ("/3", 1, 1), ("/3/1", 1, 0),
    ]
    assert census.T == (4, 6, 2)
    assert census.M == (1, 3, 2)


def test_no_reproduction():
    law = MarkedOffspringLaw({(0, 0): 1})
    tree, census = simulate_allele_tree(law, 5, np.random.default_rng(0))
    assert tree.rows() == [("/", 5, 0)]
    assert census.T == (5,) and census.M == (5,)


def test_root_pair_small_values_match_enumeration(binary_half):
    oracle = enumerate_genealogies(binary_half, 1, 1)
    assert oracle.prob(1, 0) == F(1, 2)
    assert oracle.prob(1, 2) == F(1, 8)
    T, M, _ = sample_root_pairs(binary_half, np.ones(10**5, dtype=np.int64), np.random.default_rng(4))
    for (n, l), p in [((1, 0), 0.5), ((1, 2), 0.125)]:
        freq = np.mean((T == n) & (M == l))
        assert abs(freq - p) <= 4 * np.sqrt(p * (1 - p) / 1e5)


@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_tree_invariants_hold(seed, a):
    law = binomial_mark(binary_law(), F(1, 2))
    tree, census = simulate_allele_tree(law, a, np.random.default_rng(seed), Caps(max_individuals=10**7), depth=6)
    tree.validate(a)
    assert census == tree.census(a)
    assert census.M[0] == a
    for u in tree.vertices():
        sizes = tree.children(u)
        assert np.all(sizes[:-1] >= sizes[1:])
        assert np.all(sizes > 0)
        assert all(tree.size(u[:i]) > 0 for i in range(len(u)))


@pytest.mark.parametrize("a", [1, 2, 3])
def test_root_pair_law_matches_exact_table(binary_half, a):
    n_max = 40
    table = joint_law_T0_M1(binary_half, a, n_max).as_float()
    T, M, _ = sample_root_pairs(binary_half, np.full(10**6, a), np.random.default_rng(100 + a))
    keep = T <= n_max
    obs = np.zeros(table.shape)
    np.add.at(obs, (T[keep], M[keep]), 1)
    # families larger than n_max form one overflow cell
    probs = np.append(table.ravel(), 1 - table.sum())
    assert chi2_gof(np.append(obs.ravel(), np.count_nonzero(~keep)), probs).pvalue > 0.01


def test_census_chain_level_one_matches_exact(binary_half):
    # T_1 given M_1 = m has the law of T_0 under m ancestors
    T, M, _ = sample_census(binary_half, 1, 2, np.random.default_rng(8), size=2 * 10**5)
    sel = M[:, 1] == 2
    table = joint_law_T0_M1(binary_half, 2, 30).marginal_T0()
    obs = np.bincount(np.minimum(T[sel, 1], 31), minlength=32)
    assert chi2_gof(obs, np.append(table, 1 - table.sum())).pvalue > 0.01


def test_pattern_matches_full_tree_law(binary_half):
    rng = np.random.default_rng(5)
    out = sample_pattern(binary_half, 1, [(1,), (2,)], 20000, rng)
    s1, _ = out[(1,)]
    s2, _ = out[(2,)]
    assert np.all(s1 >= s2)
    # the mutant process is critical here, so whole trees are heavy tailed; level 1 suffices
    full = [simulate_allele_tree(binary_half, 1, np.random.default_rng(10**6 + i), depth=1)[0] for i in range(5000)]
    f1 = np.array([t.size((1,)) for t in full])
    from alleletree.stats import chi2_two_sample

    assert chi2_two_sample(np.minimum(s1, 20), np.minimum(f1, 20)).pvalue > 0.01


def test_truncation_is_explicit():
    law = binomial_mark(binary_law(), 0)
    rng = np.random.default_rng(0)
    with pytest.raises(TruncationError) as err:
        for _ in range(200):
            simulate_allele_tree(law, 50, rng, Caps(max_individuals=100))
    assert "census" in err.value.partial or "T0" in err.value.partial
    T, M, tr = sample_root_pairs(law, np.full(50, 50), rng, 100, allow_truncation=True)
    assert tr.any() and np.all(T[tr] > 100)


def test_resample_no_mutants():
    law = MarkedOffspringLaw({(0, 0): F(1, 2), (1, 0): F(1, 2)})
    rep = branching_resample_check(law, 1000, np.random.default_rng(0))
    assert rep.passed and not rep.cells


def test_resample_deterministic_chain():
    law = MarkedOffspringLaw({(0, 1): 1})
    rep = branching_resample_check(law, 2000, np.random.default_rng(0))
    assert rep.passed
    assert set(rep.cells) == {1}


def test_resample_binary_half(binary_half):
    rep = branching_resample_check(binary_half, 10**6, np.random.default_rng(11), min_cell=500)
    assert rep.cells
    assert all(c.pvalue > 0.01 for c in rep.cells.values())


def test_resample_rejects_critical_clones():
    with pytest.raises(ValueError):
        branching_resample_check(binomial_mark(binary_law(), 0), 100, np.random.default_rng(0))
