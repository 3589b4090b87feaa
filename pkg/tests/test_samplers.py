import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from polyabranch import (DIFFERENCE, POISSON, SUM, BaseMeasure, PointConfiguration, ProcessSpec, Space,
                         exact_count_pmf, sample_poisson, sample_polya_difference, sample_polya_sum,
                         sample_polya_sum_cluster)
from polyabranch.samplers import (draw_counts, partition_function, polya_sum_cluster_counts, polya_urn,
                                  superpose, urn_law, urn_place)
from polyabranch.stats import chi_square_gof, chi_square_two_sample


def single(w):
    s = Space.discrete(["a"])
    return BaseMeasure(s, [w])


def test_point_configuration_from_points():
    s = Space.discrete(["a", "b"])
    mu = PointConfiguration.from_points(s, ["a", "b", "a"])
    assert mu.total == 3 and mu.count(["a"]) == 2
    assert PointConfiguration.empty(s) <= mu


def test_sum_single_unit_atom_is_geometric():
    pmf = exact_count_pmf(ProcessSpec(SUM, single(1.0), 0.5)).as_dict()
    for k in range(6):
        assert pmf[(k,)] == pytest.approx(0.5 ** (k + 1), abs=1e-12)


def test_difference_two_unit_atoms_uniform():
    s = Space.discrete(["a", "b"])
    pmf = exact_count_pmf(ProcessSpec(DIFFERENCE, BaseMeasure(s, [1, 1]), 1.0)).as_dict()
    assert len(pmf) == 4
    assert all(p == pytest.approx(0.25, abs=1e-15) for p in pmf.values())


def test_difference_double_atom():
    pmf = exact_count_pmf(ProcessSpec(DIFFERENCE, single(2), 1.0)).as_dict()
    assert pmf == pytest.approx({(0,): 0.25, (1,): 0.5, (2,): 0.25}, abs=1e-15)


def test_poisson_exact_matches_scipy():
    pmf = exact_count_pmf(ProcessSpec(POISSON, single(1.7))).as_dict()
    for k in range(8):
        assert pmf[(k,)] == pytest.approx(stats.poisson.pmf(k, 1.7), abs=1e-12)


@pytest.mark.parametrize("z", [0.2, 0.6])
def test_sum_total_count_is_negative_binomial(z):
    s = Space.discrete(["a", "b", "c"])
    spec = ProcessSpec(SUM, BaseMeasure(s, [0.5, 1.0, 1.5]), z)
    pmf = exact_count_pmf(spec)
    totals = pmf.configs.sum(axis=1)
    for n in range(6):
        assert pmf.probs[totals == n].sum() == pytest.approx(stats.nbinom.pmf(n, 3.0, 1 - z), abs=1e-12)
    assert pmf.truncation_error < 1e-12


@given(st.lists(st.integers(0, 3), min_size=1, max_size=4), st.floats(0.1, 3.0))
def test_difference_total_probability(r, z):
    s = Space.discrete([str(i) for i in range(len(r))])
    pmf = exact_count_pmf(ProcessSpec(DIFFERENCE, BaseMeasure(s, r), z))
    assert pmf.probs.sum() == pytest.approx(1.0, abs=1e-12)
    assert pmf.meta["xi"] == pytest.approx(partition_function(DIFFERENCE, sum(r), z), rel=1e-12)
    assert np.all(pmf.configs <= np.array(r))


def test_empty_region_gives_empty_configuration(rng):
    s = Space.discrete(["a", "b"])
    rho = BaseMeasure(s, [0.0, 0.0])
    for fam, z in ((POISSON, 1.0), (SUM, 0.5), (DIFFERENCE, 1.0)):
        assert draw_counts(ProcessSpec(fam, rho, z), rng, 50).sum() == 0


def test_sum_z_zero_is_empty(rng):
    s = Space.discrete(["a"])
    assert draw_counts(ProcessSpec(SUM, BaseMeasure(s, [3.0]), 0.0), rng, 20).sum() == 0


def test_invalid_parameters():
    with pytest.raises(ValueError):
        ProcessSpec(SUM, single(1.0), 1.0)
    with pytest.raises(ValueError):
        ProcessSpec(DIFFERENCE, single(0.5), 1.0)
    with pytest.raises(ValueError):
        ProcessSpec("mixed", single(1.0), 0.5)


@given(st.lists(st.floats(0.2, 3.0), min_size=2, max_size=3), st.integers(1, 4))
def test_urn_law_matches_dirichlet_multinomial(w, n):
    law = urn_law(w, n)
    a = np.asarray(w)
    for k, p in law.items():
        k = np.asarray(k)
        dm = math.exp(math.lgamma(n + 1) - sum(math.lgamma(x + 1) for x in k)
                      + math.lgamma(a.sum()) - math.lgamma(a.sum() + n)
                      + sum(math.lgamma(ai + ki) - math.lgamma(ai) for ai, ki in zip(a, k)))
        assert p == pytest.approx(dm, rel=1e-10)


def test_batch_urn_matches_sequential_urn(rng):
    w = [0.5, 1.0, 2.0]
    law = urn_law(w, 4)
    batch = urn_place(w, np.full(20000, 4), rng)
    assert chi_square_gof(batch, law) > 1e-4
    seq = np.array([polya_urn(w, 4, rng) for _ in range(3000)])
    assert chi_square_gof(seq, law) > 1e-4


def test_sampler_matches_exact_law(rng):
    s = Space.discrete(["a", "b"])
    for fam, z, r in ((SUM, 0.4, [0.7, 1.3]), (DIFFERENCE, 1.5, [2, 1]), (POISSON, 1.0, [0.5, 1.0])):
        spec = ProcessSpec(fam, BaseMeasure(s, r), z)
        samples = draw_counts(spec, rng, 20000)
        assert chi_square_gof(samples, exact_count_pmf(spec).as_dict()) > 1e-4, fam


def test_cluster_sampler_agrees_with_urn_sampler(rng):
    s = Space.discrete(["a", "b", "c"])
    spec = ProcessSpec(SUM, BaseMeasure(s, [0.3, 1.0, 0.6]), 0.55)
    a = draw_counts(spec, rng, 20000)
    b = polya_sum_cluster_counts(spec, rng, 20000)
    assert chi_square_two_sample(a, b) > 1e-4
    assert chi_square_gof(b, exact_count_pmf(spec).as_dict()) > 1e-4


def test_difference_sample_never_exceeds_rho(rng):
    s = Space.discrete(["a", "b"])
    spec = ProcessSpec(DIFFERENCE, BaseMeasure(s, [3, 1]), 4.0)
    assert np.all(draw_counts(spec, rng, 5000) <= [3, 1])


def test_single_draw_wrappers(rng):
    s = Space.discrete(["a", "b"])
    rho = BaseMeasure(s, [1, 2])
    for fn, fam in ((sample_poisson, POISSON), (sample_polya_sum, SUM),
                    (sample_polya_sum_cluster, SUM), (sample_polya_difference, DIFFERENCE)):
        mu = fn(ProcessSpec(fam, rho, 0.5), rng)
        assert isinstance(mu, PointConfiguration) and mu.counts.shape == (2,)
    with pytest.raises(ValueError):
        sample_poisson(ProcessSpec(SUM, rho, 0.5), rng)


def test_superpose_of_independent_blocks():
    s = Space.discrete(["a", "b"])
    rho = BaseMeasure(s, [1, 1])
    spec = ProcessSpec(DIFFERENCE, rho, 1.0)
    joint = superpose(exact_count_pmf(spec, ["a"]), exact_count_pmf(spec, ["b"])).as_dict()
    assert joint == pytest.approx(exact_count_pmf(spec).as_dict(), abs=1e-15)
