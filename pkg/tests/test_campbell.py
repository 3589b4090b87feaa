import numpy as np
import pytest

from polyabranch import (DIFFERENCE, POISSON, SUM, BaseMeasure, BivariateFunctional, BranchingKernel,
                         CountIndicator, CountPolynomial, ExpCount, One, PapangelouSpec, Space,
                         estimate_campbell, evaluate_papangelou, exact_ibp, exact_ibp_difference,
                         intensity_measure, iterated_kernel, palm_pmf, qj_pmf, sample_palm, sample_Qj,
                         smoothing_kernel, verify_ibp, verify_ibp_battery, verify_iterated_symmetry,
                         verify_palm, verify_superposition)
from polyabranch.campbell import UnsupportedOperation, branched_pmf, iterated_tensor


def battery(space):
    L = space.mask(["L"])
    out = []
    for g in np.eye(space.n_sites)[:3].tolist() + [L.astype(float).tolist()]:
        for phi in (ExpCount(np.linspace(0.2, 0.9, space.n_sites)), CountIndicator(L, (1,)),
                    CountPolynomial(space.mask(None), (1.0, 0.5, 0.25))):
            out.append(BivariateFunctional(np.array(g), phi))
    return out


def test_papangelou_empty_identity_is_z_rho_f(abc):
    space, rho, _ = abc
    spec = PapangelouSpec.build(SUM, rho, 0.3, BranchingKernel.identity(space))
    f = np.array([1.0, 2.0, 0.5])
    assert evaluate_papangelou(spec, np.zeros(3), f) == pytest.approx(0.3 * 3.5)


def test_papangelou_difference_rejects_excess(abc):
    space, rho, kappa = abc
    spec = PapangelouSpec.build(DIFFERENCE, rho, 1.0, BranchingKernel.identity(space))
    assert evaluate_papangelou(spec, [1, 0, 0], [1, 1, 1]) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        evaluate_papangelou(spec, [2, 0, 0], [1, 1, 1])
    # after partition branching two points may share an atom of mass one
    part = PapangelouSpec.build(DIFFERENCE, rho, 1.0, kappa)
    assert evaluate_papangelou(part, [2, 0, 0], [1, 0, 0]) == pytest.approx(0.0)


@pytest.mark.parametrize("z", [0.5, 1.0, 2.0])
def test_exact_ibp_difference(abc, z):
    space, rho, kappa = abc
    spec = PapangelouSpec.build(DIFFERENCE, rho, z, kappa)
    reps = exact_ibp_difference(spec, battery(space))
    assert all(r.defect < 1e-12 for r in reps)


@pytest.mark.parametrize("family,z", [(SUM, 0.4), (POISSON, 1.0)])
def test_exact_ibp_truncated_families(abc, family, z):
    space, rho, kappa = abc
    spec = PapangelouSpec.build(family, rho, z, kappa)
    hs = [h for h in battery(space) if not isinstance(h.phi, CountPolynomial)]
    assert all(r.defect < 1e-10 for r in exact_ibp(spec, hs))


def test_exact_ibp_detects_non_conditional_kernel(abc):
    space, rho, _ = abc
    spec = PapangelouSpec.build(DIFFERENCE, rho, 1.0, smoothing_kernel(space))
    assert max(r.defect for r in exact_ibp(spec, battery(space), eps=1e-12)) > 1e-4


def test_difference_unit_atoms_identity_law(abc):
    space, rho, _ = abc
    spec = PapangelouSpec.build(DIFFERENCE, rho, 1.0, BranchingKernel.identity(space))
    pmf = branched_pmf(spec)
    assert len(pmf) == 8 and np.allclose(pmf.probs, 1 / 8)


def test_iterated_kernel_symmetry(abc):
    space, rho, kappa = abc
    for fam, z in ((SUM, 0.4), (DIFFERENCE, 1.5)):
        spec = PapangelouSpec.build(fam, rho, z, kappa)
        for n in (2, 3, 4):
            assert verify_iterated_symmetry(spec, n).passed
        assert iterated_kernel(spec, [0, 1, 2]) == pytest.approx(iterated_kernel(spec, [2, 0, 1]))
    bad = PapangelouSpec.build(SUM, rho, 0.4, smoothing_kernel(space))
    assert not verify_iterated_symmetry(bad, 2).passed


def test_iterated_tensor_matches_pointwise(abc):
    space, rho, kappa = abc
    spec = PapangelouSpec.build(DIFFERENCE, rho, 0.8, kappa)
    T = iterated_tensor(spec, 3)
    assert T[0, 2, 1] == pytest.approx(iterated_kernel(spec, [0, 2, 1]))


def test_qj_normalisers(abc):
    space, rho, kappa = abc
    q = qj_pmf(PapangelouSpec.build(DIFFERENCE, rho, 1.0, kappa), "L")
    assert q.meta["xi"] == pytest.approx(4.0)
    q = qj_pmf(PapangelouSpec.build(SUM, rho, 0.5, kappa), "L")
    assert q.meta["xi"] == pytest.approx(4.0, rel=1e-12)


def test_superposition_exact_and_sampled(abc, rng):
    space, rho, kappa = abc
    for fam, z in ((DIFFERENCE, 1.0), (SUM, 0.5)):
        spec = PapangelouSpec.build(fam, rho, z, kappa)
        rep = verify_superposition(spec, n=20000, seed=4)
        assert rep.passed, rep.details
        assert rep.defect < 1e-12
    draws = sample_Qj(PapangelouSpec.build(DIFFERENCE, rho, 1.0, kappa), "R", rng, 10)
    assert draws.shape == (10, 3) and np.all(draws[:, :2] == 0)


def test_intensity_matches_campbell(four):
    space, rho, kappa = four
    g = np.array([1.0, 0.5, 0.0, 2.0])
    for fam, z, c in ((SUM, 0.5, 1.0), (DIFFERENCE, 1.0, 0.5), (POISSON, 1.0, 1.0)):
        spec = PapangelouSpec.build(fam, rho, z, kappa)
        exact = float(kappa.measure(rho.weights) @ g) * c
        assert intensity_measure(spec).weights @ g == pytest.approx(exact)
        est = estimate_campbell(spec.draw, BivariateFunctional(g), 20000, seed=1)
        assert abs(est.mean - exact) < 4 * est.stderr


def test_palm_exact_identity():
    space = Space.discrete(["a", "b", "c"], ["L", "L", "R"])
    rho = BaseMeasure(space, [0.5, 0.3, 0.4])
    kappa = BranchingKernel.partition(space, [1.0, 2.0, 1.0])
    spec = PapangelouSpec.build(SUM, rho, 0.3, kappa)
    law = branched_pmf(spec, tail=1e-15)
    nu = intensity_measure(spec).weights
    palms = [palm_pmf(spec, x, tail=1e-15) for x in range(3)]
    phis = [One(), ExpCount(np.array([0.3, 0.1, 0.5])), CountIndicator(space.mask(["L"]), (1, 2))]
    g = np.array([1.0, 0.5, 2.0])
    for phi in phis:
        lhs = law.expect(BivariateFunctional(g, phi).lhs_values)
        rhs = sum(g[x] * nu[x] * palms[x].expect(phi) for x in range(3))
        assert lhs == pytest.approx(rhs, abs=1e-11)


def test_palm_mc(four, rng):
    space, rho, kappa = four
    spec = PapangelouSpec.build(SUM, rho, 0.5, kappa)
    reps = verify_palm(spec, [1.0, 0.0, 0.0, 1.0], [One(), ExpCount(np.full(4, 0.3))], 20000, seed=9)
    assert all(r.passed for r in reps)
    mu = sample_palm(spec, "a", rng)
    assert mu[0] >= 1


def test_palm_difference_unsupported(four, rng):
    space, rho, kappa = four
    spec = PapangelouSpec.build(DIFFERENCE, rho, 1.0, kappa)
    with pytest.raises(UnsupportedOperation):
        sample_palm(spec, 0, rng)


def test_mc_ibp_battery(four):
    space, rho, kappa = four
    spec = PapangelouSpec.build(SUM, rho, 0.5, kappa)
    reps = verify_ibp_battery(spec, battery(space)[:6], 20000, seed=2)
    assert all(r.passed for r in reps)
    one = verify_ibp(spec, BivariateFunctional(np.ones(4)), 20000, seed=3)
    assert one.passed and one.replicas == 20000


def test_papangelou_examples():
    s = Space.discrete(["a"])
    rho = BaseMeasure(s, [1])
    spec = PapangelouSpec.build(SUM, rho, 0.5, BranchingKernel.identity(s))
    assert evaluate_papangelou(spec, [1], [1.0]) == pytest.approx(1.0)
    diff = PapangelouSpec.build(DIFFERENCE, rho, 1.0, BranchingKernel.identity(s))
    assert evaluate_papangelou(diff, [1], [1.0]) == 0.0


def test_campbell_poisson_mean_and_empty_region(abc, rng):
    space, rho, kappa = abc
    spec = PapangelouSpec.build(POISSON, rho, 1.0, BranchingKernel.identity(space))
    L = space.mask(["L"]).astype(float)
    est = estimate_campbell(spec.draw, BivariateFunctional(L, One()), 20000, seed=3)
    assert abs(est.mean - 2.0) < 4 * est.stderr
    zero = estimate_campbell(spec.draw, BivariateFunctional(np.zeros(3), One()), 100, seed=3)
    assert zero.mean == 0.0 and zero.stderr == 0.0


def test_mecke_poisson_mc(abc):
    space, rho, _ = abc
    spec = PapangelouSpec.build(POISSON, rho, 1.0, BranchingKernel.identity(space))
    reps = verify_ibp_battery(spec, battery(space), 20000, seed=5)
    assert all(r.passed for r in reps)


def test_exact_ibp_difference_unequal_atoms():
    s = Space.discrete(["a", "b"], ["A", "B"])
    rho = BaseMeasure(s, [2, 1])
    spec = PapangelouSpec.build(DIFFERENCE, rho, 1.0, BranchingKernel.partition(s))
    hs = [BivariateFunctional(g, phi) for g in np.eye(2)
          for phi in (One(), ExpCount([0.4, 1.1]), CountIndicator(s.mask(["A"]), (1,)))]
    assert all(r.defect < 1e-12 for r in exact_ibp_difference(spec, hs))


@pytest.mark.parametrize("family", [SUM, DIFFERENCE])
def test_exact_ibp_z_to_zero(abc, family):
    space, rho, kappa = abc
    spec = PapangelouSpec.build(family, rho, 0.0, kappa)
    for r in exact_ibp(spec, battery(space)[:3]):
        assert r.lhs == 0.0 and r.rhs == 0.0


def test_iterated_kernel_first_order_is_papangelou(abc):
    space, rho, kappa = abc
    spec = PapangelouSpec.build(SUM, rho, 0.3, kappa)
    for x in range(3):
        assert iterated_kernel(spec, [x]) == pytest.approx(evaluate_papangelou(spec, np.zeros(3), np.eye(3)[x]))


def test_qj_empty_block_and_geometric_block():
    s = Space.discrete(["a", "b"], ["A", "B"])
    spec = PapangelouSpec.build(SUM, BaseMeasure(s, [0, 1]), 0.5, BranchingKernel.partition(s))
    empty = qj_pmf(spec, "A")
    assert empty.meta["xi"] == pytest.approx(1.0) and len(empty) == 1 and empty.probs[0] == 1.0
    geo = qj_pmf(spec, "B", tail=1e-14)
    assert geo.meta["xi"] == pytest.approx(2.0, abs=1e-12)
    for c, p in geo.as_dict().items():
        assert p == pytest.approx(0.5 ** (c[0] + 1), rel=1e-9)


def test_intensity_examples():
    s = Space.discrete(["a"])
    rho = BaseMeasure(s, [1])
    kid = BranchingKernel.identity(s)
    assert intensity_measure(PapangelouSpec.build(SUM, rho, 0.75, kid)).weights[0] == pytest.approx(3.0)
    diff = PapangelouSpec.build(DIFFERENCE, BaseMeasure(s, [2]), 1.0, kid)
    assert intensity_measure(diff).weights[0] == pytest.approx(1.0)


def test_palm_identity_kernel_marginal():
    s = Space.discrete(["a", "b"])
    spec = PapangelouSpec.build(SUM, BaseMeasure(s, [1, 1]), 0.5, BranchingKernel.identity(s))
    law = palm_pmf(spec, 0, tail=1e-14).marginal([[0]])
    # NB(2, 1/2) shifted by the point at x
    for (k,), p in law.items():
        assert k >= 1
        assert p == pytest.approx(k * 0.5 ** (k + 1), rel=1e-8)
