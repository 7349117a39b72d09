import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chainfactor import recovery as rc
from chainfactor import spinchain as sc
from chainfactor import tomography as tm
from chainfactor.errors import ArgumentError, ResourceError
from chainfactor.qop import DensityMatrix, random_density, trace_distance

ZERO = DensityMatrix(np.diag([1.0, 0.0]), (2,))


def _pairs(rho, l):
    part = sc.ChainPartition.uniform_blocks(len(rho.dims), l)
    return rc.block_pairs(rho, part), [part.size(k) for k in part.names]


class TestConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [{"scheme": "shadows"}, {"delta": -1e-3}, {"confidence": 0.0}, {"confidence": 1.0}, {"samples_per_marginal": 0}],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ArgumentError):
            tm.TomographyConfig(**kwargs)

    def test_union_bound_scaling(self):
        cfg = tm.TomographyConfig(samples_per_marginal=1000, confidence=0.05)
        assert cfg.samples_for(1) == 1000
        assert cfg.samples_for(10) == int(np.ceil(1000 * np.log(10 / 0.05) / np.log(20)))


class TestDeltaBall:
    def test_zero_delta_is_truth(self, rng):
        rho = DensityMatrix(random_density(4, rng), (2, 2))
        est = tm.simulate_marginal_estimate(rho, tm.TomographyConfig(delta=0.0))
        assert est.estimate.data is rho.data or np.array_equal(est.estimate.data, rho.data)
        assert est.true_error_1norm == 0

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(1e-6, 0.5))
    def test_error_exactly_delta(self, seed, delta):
        rho = DensityMatrix(random_density(4, np.random.default_rng(seed), rank=2), (2, 2))
        est = tm.simulate_marginal_estimate(rho, tm.TomographyConfig(delta=delta))
        assert est.true_error_1norm <= delta * (1 + 1e-9)
        assert est.true_error_1norm == pytest.approx(min(delta, trace_distance(rho, np.eye(4) / 4)), rel=1e-9)
        assert np.linalg.eigvalsh(est.estimate.data).min() > 0


class TestPauliSampling:
    def test_exact_probabilities_invert(self, rng):
        rho = DensityMatrix(random_density(8, rng), (2, 2, 2))
        probs = tm.born_table(rho)
        np.testing.assert_allclose(tm.pauli_linear_inversion(probs), rho.data, atol=1e-12)

    def test_born_table_normalized(self, rng):
        rho = DensityMatrix(random_density(4, rng), (2, 2))
        p = tm.born_table(rho)
        assert p.shape == (3, 2, 3, 2)
        np.testing.assert_allclose(p.sum(axis=(1, 3)), np.ones((3, 3)))

    def test_zero_state_fixture(self):
        # 100 seeded runs, 1e5 samples: Monte-Carlo max error 0.0188
        errs = [
            tm.simulate_marginal_estimate(
                ZERO, tm.TomographyConfig("pauli_sampling", samples_per_marginal=100_000, seed=s)
            ).true_error_1norm
            for s in range(100)
        ]
        assert sum(e <= 0.05 for e in errs) >= 99

    def test_consistent_in_samples(self):
        m = sc.marginal(sc.gibbs_state(sc.tfim(), 6, 1.0), sc.ChainPartition.tripartite(2, 2, 2), ["B"])
        meds = []
        for samples in (1_000, 10_000, 100_000):
            cfg = [tm.TomographyConfig("pauli_sampling", samples_per_marginal=samples, seed=s) for s in range(10)]
            meds.append(np.median([tm.simulate_marginal_estimate(m, c).true_error_1norm for c in cfg]))
        assert meds[0] > meds[1] > meds[2]

    def test_estimate_is_state(self, rng):
        rho = DensityMatrix(random_density(4, rng, rank=1), (2, 2))
        est = tm.simulate_marginal_estimate(rho, tm.TomographyConfig("pauli_sampling", samples_per_marginal=50))
        w = np.linalg.eigvalsh(est.estimate.data)
        assert w.min() > 0 and w.sum() == pytest.approx(1.0)

    def test_streams_per_block(self, rng):
        rho = DensityMatrix(random_density(4, rng), (2, 2))
        cfg = tm.TomographyConfig("pauli_sampling", samples_per_marginal=500, seed=3)
        a = tm.simulate_marginal_estimate(rho, cfg, block_index=2)
        b = tm.simulate_marginal_estimate(rho, cfg, block_index=2)
        c = tm.simulate_marginal_estimate(rho, cfg, block_index=1)
        np.testing.assert_array_equal(a.estimate.data, b.estimate.data)
        assert not np.array_equal(a.estimate.data, c.estimate.data)

    def test_records_csv(self):
        cfg = tm.TomographyConfig("pauli_sampling", samples_per_marginal=300, seed=1)
        est = tm.simulate_marginal_estimate(ZERO, cfg, block_index=4, keep_records=True)
        rows = list(csv.reader(io.StringIO(tm.records_to_csv(est.records))))
        assert rows[0] == ["block_index", "basis_string", "outcome_string", "count"]
        assert sum(int(r[3]) for r in rows[1:]) == 300
        assert {r[0] for r in rows[1:]} == {"4"}
        # |0> never yields outcome 1 in the Z basis
        assert ["4", "Z", "1"] not in [r[:3] for r in rows[1:]]

    def test_qubits_only(self):
        with pytest.raises(ArgumentError):
            tm.simulate_marginal_estimate(DensityMatrix(np.eye(3) / 3, (3,)), tm.TomographyConfig("pauli_sampling"))

    def test_site_limit(self):
        big = DensityMatrix(np.eye(512) / 512, (2,) * 9)
        with pytest.raises(ResourceError):
            tm.simulate_marginal_estimate(big, tm.TomographyConfig("pauli_sampling"))


class TestLearning:
    def test_zero_delta_matches_exact(self, tfim8):
        res = tm.learn_mpo(tfim8, 2, tm.TomographyConfig(delta=0.0))
        exact = rc.reconstruct(tfim8.state, sc.ChainPartition.uniform_blocks(8, 2))
        np.testing.assert_array_equal(res.reconstructed.data, exact.data)
        assert res.trace_distance_to_truth == trace_distance(exact, tfim8.state)

    def test_classical_small_delta(self):
        inst = sc.gibbs_state(sc.classical_ising(1.0, 0.3), 10, 1.0)
        res = tm.learn_mpo(inst, 2, tm.TomographyConfig(delta=1e-6), export_mpo=False)
        assert res.trace_distance_to_truth <= 1e-3

    def test_mpo_matches(self, tfim8):
        res = tm.learn_mpo(tfim8, 2, tm.TomographyConfig(delta=1e-3))
        assert np.abs(rc.mpo_contract(res.mpo).data - res.reconstructed.data).max() <= 1e-9

    def test_shared_marginal(self, tfim8):
        cfg = tm.TomographyConfig(delta=1e-4, shared_marginal=True)
        res = tm.learn_mpo(tfim8, 2, cfg, export_mpo=False)
        est = [e.estimate.data for e in res.estimates]
        assert all(np.array_equal(e, est[0]) for e in est)
        # boundary pairs differ from the bulk one, so their errors exceed delta
        assert max(e.true_error_1norm for e in res.estimates) > 1e-4

    def test_error_decreases_with_delta(self, tfim10):
        # at l=2 the truncation error of the reconstruction hides the delta dependence
        errs = [
            tm.learn_mpo(tfim10, 3, tm.TomographyConfig(delta=d), export_mpo=False).trace_distance_to_truth
            for d in (1e-2, 1e-3, 1e-4)
        ]
        assert errs[0] > errs[1] > errs[2]

    def test_too_few_blocks(self, tfim8):
        with pytest.raises(ArgumentError):
            tm.learn_mpo(tfim8, 8, tm.TomographyConfig(delta=0.0))


class TestPurity:
    def test_product(self, product8):
        pairs, sizes = _pairs(product8.state, 2)
        assert tm.purity_p2(pairs, sizes)[0] == pytest.approx(product8.purity(), rel=1e-10)

    @pytest.mark.parametrize("l", [1, 2, 3])
    def test_maximally_mixed(self, l):
        rho = DensityMatrix(np.eye(2**6) / 2**6, (2,) * 6)
        pairs, sizes = _pairs(rho, l)
        assert tm.purity_p2(pairs, sizes)[0] == pytest.approx(2.0**-6, rel=1e-12)

    def test_classical_chain_without_field(self):
        # flip symmetry makes sum_c p(c|b)^2 independent of b, so the Renyi-2 CMI vanishes
        inst = sc.gibbs_state(sc.classical_ising(1.0, 0.0), 8, 1.0)
        pairs, sizes = _pairs(inst.state, 1)
        assert tm.purity_p2(pairs, sizes)[0] == pytest.approx(inst.purity(), rel=1e-10)

    def test_classical_chain_with_field(self, classical8):
        # a Markov chain with a field has nonzero Renyi-2 CMI
        pairs, sizes = _pairs(classical8.state, 1)
        assert abs(tm.purity_p2(pairs, sizes)[0] / classical8.purity() - 1) > 1e-6

    def test_block_size_improves(self, tfim12):
        errs = []
        for l in (2, 3):
            pairs, sizes = _pairs(tfim12.state, l)
            errs.append(abs(tm.purity_p2(pairs, sizes)[0] / tfim12.purity() - 1))
        assert errs[1] <= errs[0]

    def test_estimate_product_exact(self, product8):
        rep = tm.estimate_purity(product8, 2, tm.TomographyConfig(delta=0.0))
        assert rep.multiplicative_error <= 1e-12
        assert rep.p2_estimate > 0 and rep.n_blocks == 4

    def test_needs_pairs(self):
        with pytest.raises(ArgumentError):
            tm.purity_p2([], [2])

    @pytest.mark.parametrize("n, eps, l", [(10, 0.2, 3), (12, 0.2, 3), (8, 0.5, 3), (4, 0.9, 2)])
    def test_block_rule(self, n, eps, l):
        assert tm.purity_block_size(n, eps) == l
