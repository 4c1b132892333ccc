from fractions import Fraction as F
from itertools import product

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from alleletree.exact import joint_law_T0_M1
from alleletree.genealogy import TruncationError, sample_census, simulate_allele_tree
from alleletree.offspring import MarkedOffspringLaw, OffspringLaw, binary_law, binomial_mark
from alleletree.stats import chi2_gof, chi2_two_sample
from alleletree.walker import (
    WalkPath,
    sample_walk_chains,
    walk_allele_tree,
    walk_chain,
    walk_census,
    walk_path,
    walk_root_pair,
)

# step sequence read off the random-walk figure: one ancestor
FIG_CLONES = [2, 0, 0, 1, 0, 2, 0, 0, 1, 0, 0, 2, 0, 0]
FIG_MUTANTS = [1, 0, 1, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0]

# total mean 3/4, so whole trees stay small (with a critical base the mutant process is critical too)
SUB = binomial_mark(OffspringLaw.from_mapping({0: F(1, 2), 1: F(1, 4), 2: F(1, 4)}), F(1, 2))


def test_figure_chain(binary_half):
    chain = walk_chain(binary_half, 1, None, steps=(FIG_CLONES, FIG_MUTANTS))
    assert [m for _, m in chain] == [2, 2, 1, 0]
    assert chain == [(3, 2), (5, 2), (3, 1), (3, 0)]


def test_figure_tree(binary_half):
    tree = walk_allele_tree(binary_half, 1, steps=(FIG_CLONES, FIG_MUTANTS))
    assert tree.rows() == [
        ("/", 3, 2), ("/1", 3, 2), ("/1/1", 2, 0), ("/1/2", 1, 1), ("/1/2/1", 3, 0), ("/2", 2, 0),
    ]
    tree.validate(1)


def test_figure_passage_times():
    path = WalkPath(1, np.array(FIG_CLONES), np.array(FIG_MUTANTS))
    sig = path.passage_times(5)
    assert list(sig) == [3, 5, 8, 10, 11, 14]
    # excursion lengths are the level-1..3 family sizes of the figure tree
    assert list(np.diff(sig)) == [2, 3, 2, 1, 3]
    assert list(path.mutants_by(sig)) == [2, 2, 4, 4, 5, 5]


def test_no_reproduction_walk():
    law = MarkedOffspringLaw({(0, 0): 1})
    rng = np.random.default_rng(0)
    assert walk_root_pair(law, 4, rng) == (4, 0)
    assert walk_allele_tree(law, 3, rng).rows() == [("/", 3, 0)]


def test_no_mutants_chain_stops():
    law = binomial_mark(binary_law(), 0)
    chain = walk_chain(law, 1, None, np.random.default_rng(1))
    assert len(chain) == 1 and chain[0][1] == 0


def _dwass_paths(n):
    # probability that n steps in {0, 2} (each 1/2) sum to n - 1, by brute force
    return sum(F(1, 2**n) for s in product((0, 2), repeat=n) if sum(s) == n - 1)


@pytest.mark.parametrize("n, expected", [(1, F(1, 2)), (3, F(1, 8)), (5, F(1, 16))])
def test_dwass_values_by_path_enumeration(n, expected):
    assert F(1, n) * _dwass_paths(n) == expected


def test_walk_root_law_p0():
    law = binomial_mark(binary_law(), 0)
    # T_0 has infinite mean here: cap the walk and keep the walks that finished
    with pytest.raises(TruncationError) as err:
        sample_walk_chains(law, 1, 1, 2 * 10**5, np.random.default_rng(2), max_steps=64)
    t = err.value.partial["T"][:, 0]
    assert np.all((t == 0) | (t % 2 == 1))
    for n, p in [(1, 0.5), (3, 0.125), (5, 0.0625)]:
        assert abs(np.mean(t == n) - p) <= 4 * np.sqrt(p * (1 - p) / len(t))


def test_walk_root_pair_matches_exact(binary_half):
    exact = joint_law_T0_M1(binary_half, 1, 40)
    T, M = sample_walk_chains(binary_half, 1, 1, 10**6, np.random.default_rng(3))
    t, m = T[:, 0], M[:, 1]
    keep = t <= 40
    obs = np.zeros(exact.table.shape)
    np.add.at(obs, (t[keep], m[keep]), 1)
    probs = np.append(exact.as_float().ravel(), float(exact.truncation_bound))
    assert chi2_gof(np.append(obs.ravel(), np.count_nonzero(~keep)), probs).pvalue > 0.01


def test_vectorized_chain_matches_scalar(binary_half):
    rng = np.random.default_rng(4)
    scalar = np.array([walk_chain(binary_half, 2, 2, rng)[0] for _ in range(20000)])
    T, M = sample_walk_chains(binary_half, 2, 1, 20000, np.random.default_rng(5))
    a = np.minimum(scalar, 15)
    b = np.minimum(np.stack([T[:, 0], M[:, 1]], axis=1), 15)
    assert chi2_two_sample(a, b).pvalue > 0.01


def test_walk_chain_matches_direct_census(binary_half):
    Tw, Mw = sample_walk_chains(binary_half, 2, 2, 10**5, np.random.default_rng(6))
    Td, Md, _ = sample_census(binary_half, 2, 2, np.random.default_rng(7), size=10**5)
    rows = lambda T, M: np.minimum(np.stack([T[:, 0], M[:, 1], T[:, 1]], axis=1), 12)
    assert chi2_two_sample(rows(Tw, Mw), rows(Td, Md)).pvalue > 0.01


def test_walk_tree_matches_direct():
    def stats(tree):
        return (min(tree.size(()), 6), min(tree.size((1,)), 6), min(tree.size((2,)), 4), min(tree.size((1, 1)), 4),
                min(len(tree), 8))

    w = np.array([stats(walk_allele_tree(SUB, 1, np.random.default_rng(i))) for i in range(20000)])
    d = np.array([stats(simulate_allele_tree(SUB, 1, np.random.default_rng(10**6 + i))[0]) for i in range(20000)])
    assert chi2_two_sample(w, d).pvalue > 0.01


@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_path_invariants(seed, a):
    law = SUB
    rng = np.random.default_rng(seed)
    path = walk_path(law, a, rng)
    assert np.all(np.diff(np.concatenate([[a], path.positions])) >= -1)
    chain = walk_chain(law, a, None, steps=(path.clones, path.mutants))
    census = walk_census(chain, a)
    J = sum(census.M[1:])
    sig = path.passage_times(J)
    assert np.all(np.diff(sig) >= 1)
    assert np.all(np.diff(path.mutants_by(sig)) >= 0)
    # the chain consumes exactly the path up to its final passage time
    assert sum(census.T) == len(path.clones)
    assert sum(census.M[1:]) == int(path.mutants.sum())
    tree = walk_allele_tree(law, a, steps=(path.clones, path.mutants))
    tree.validate(a)
    assert tree.census(a).T == census.T
