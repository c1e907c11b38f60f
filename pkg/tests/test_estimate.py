import numpy as np
import pytest

from conftest import stream_from_rows
from flowvol.errors import (
    DimensionMismatch,
    EmptyHorizon,
    InsufficientEvents,
    SingularSystem,
)
from flowvol.estimate import (
    REST_AGENT,
    AgentFitResult,
    aggregate_remainder,
    assemble_global,
    assemble_normal_equations,
    contrast_value,
    empirical_intensities,
    estimate_jump_sizes,
    filter_events,
    fit_agent_vs_market,
    solve_least_squares,
)
from flowvol.events import EventStream
from flowvol.model import (
    EVENT_TYPES,
    TYPE_INDEX,
    BasisDictionary,
    HawkesModel,
    KernelMatrix,
    PiecewiseBaseline,
    toy_model,
)
from flowvol.simulate import simulate_thinning


def two_agent_symmetric_market(mu=0.4, cross=0.2, coupling=0.15):
    """Two identical agents whose price components excite each other.

    Within an agent, up moves excite down moves and vice versa; across
    agents, same-direction moves excite each other. Symmetric under the
    agent swap, so both agent-vs-market fits estimate the same blocks.
    """
    basis = BasisDictionary(np.array([1.0]))
    components = tuple((a, k) for a in ("A", "B") for k in EVENT_TYPES)
    n = len(components)
    coeffs = np.zeros((n, n, 1))
    index = {c: i for i, c in enumerate(components)}

    def link(tgt, src, value):
        coeffs[index[tgt], index[src], 0] = value

    for agent in ("A", "B"):
        link((agent, "P+"), (agent, "P-"), cross)
        link((agent, "P-"), (agent, "P+"), cross)
    for agent, other in (("A", "B"), ("B", "A")):
        link((agent, "P+"), (other, "P+"), coupling)
        link((agent, "P-"), (other, "P-"), coupling)

    rates = np.zeros(n)
    jumps = np.zeros(n)
    for agent in ("A", "B"):
        for kind, jump in (("P+", 1.0), ("P-", -1.0)):
            rates[index[(agent, kind)]] = mu
            jumps[index[(agent, kind)]] = jump
    return HawkesModel(
        components=components,
        kernels=KernelMatrix(coeffs, basis),
        baseline=PiecewiseBaseline.constant(rates, 0.0, 1.0),
        jumps=jumps,
    )


class TestFilterEvents:
    def test_single_self_event(self):
        basis = BasisDictionary(np.array([2.0]))
        stream = stream_from_rows([(0.0, "A", "La", 0.0)], (0.0, 2.0))
        feats = filter_events(stream, "A", basis, eval_times=np.array([1.0]))
        col = 1 + TYPE_INDEX["La"]  # K=1 indicator, then self block
        assert feats.matrix[0, col] == pytest.approx(2 * np.exp(-2.0), abs=1e-12)
        assert feats.matrix[0, 0] == 1.0

    def test_superposition(self):
        basis = BasisDictionary(np.array([2.0]))
        stream = stream_from_rows(
            [(0.0, "A", "La", 0.0), (0.5, "A", "La", 0.0)], (0.0, 2.0)
        )
        feats = filter_events(stream, "A", basis, eval_times=np.array([1.0]))
        col = 1 + TYPE_INDEX["La"]
        expected = 2 * np.exp(-2.0) + 2 * np.exp(-1.0)  # 1.00642944881611
        assert feats.matrix[0, col] == pytest.approx(expected, abs=1e-12)
        assert feats.matrix[0, col] == pytest.approx(1.00642944881611, abs=1e-12)

    def test_no_events_keeps_indicators(self):
        basis = BasisDictionary(np.array([1.0, 3.0]))
        stream = stream_from_rows([], (0.0, 10.0))
        edges = np.array([0.0, 5.0, 10.0])
        feats = filter_events(
            stream, "A", basis, eval_times=np.array([2.0, 7.0]), edges=edges
        )
        assert np.array_equal(feats.matrix[:, :2], [[1.0, 0.0], [0.0, 1.0]])
        assert not feats.matrix[:, 2:].any()

    def test_market_flow_separated_from_self(self):
        basis = BasisDictionary(np.array([2.0]))
        stream = stream_from_rows(
            [(0.0, "A", "La", 0.0), (0.0, "B", "La", 0.0)], (0.0, 2.0)
        )
        feats = filter_events(stream, "A", basis, eval_times=np.array([1.0]))
        self_col = 1 + TYPE_INDEX["La"]
        market_col = 1 + 8 + TYPE_INDEX["La"]
        assert feats.matrix[0, self_col] == pytest.approx(2 * np.exp(-2.0))
        assert feats.matrix[0, market_col] == pytest.approx(2 * np.exp(-2.0))

    def test_left_limit_at_event_time(self):
        basis = BasisDictionary(np.array([2.0]))
        stream = stream_from_rows([(1.0, "A", "La", 0.0)], (0.0, 2.0))
        feats = filter_events(stream, "A", basis, eval_times=np.array([1.0]))
        assert not feats.matrix[0, 1:].any()  # event at t does not count at t-
        assert feats.focus_rows[0, 1:].sum() == 0.0


class TestNormalEquations:
    def test_single_interval_rate_kernel_free(self):
        # with the kernel features switched off the minimizer is the MLE N/T
        basis = BasisDictionary(np.array([1.0]))
        rows = [(float(t), "A", "La", 0.0) for t in np.linspace(1, 9, 20)]
        stream = stream_from_rows(rows, (0.0, 10.0))
        feats = filter_events(stream, "A", basis)
        a, b = assemble_normal_equations(feats, "La")
        mu_hat = solve_least_squares(a[:1, :1], b[:1], ridge=0.0)
        assert mu_hat[0] == pytest.approx(20 / 10.0, rel=1e-12)

    def test_per_interval_rates_kernel_free(self):
        basis = BasisDictionary(np.array([1.0]))
        rows = [(float(t), "A", "Ta", 0.0) for t in np.linspace(0.5, 3.5, 6)]
        rows += [(float(t), "A", "Ta", 0.0) for t in np.linspace(4.5, 9.5, 18)]
        stream = stream_from_rows(sorted(rows), (0.0, 10.0))
        edges = np.array([0.0, 4.0, 10.0])
        feats = filter_events(stream, "A", basis, edges=edges)
        a, b = assemble_normal_equations(feats, "Ta")
        mu_hat = solve_least_squares(a[:2, :2], b[:2], ridge=0.0)
        assert mu_hat[0] == pytest.approx(6 / 4.0, rel=1e-12)
        assert mu_hat[1] == pytest.approx(18 / 6.0, rel=1e-12)

    def test_zero_events_zero_solution(self):
        basis = BasisDictionary(np.array([1.0]))
        stream = stream_from_rows([(1.0, "B", "La", 0.0)], (0.0, 10.0))
        feats = filter_events(stream, "A", basis)
        a, b = assemble_normal_equations(feats, "Cb")
        assert not b.any()
        theta = solve_least_squares(a, b)
        assert np.allclose(theta, 0.0)

    def test_empty_horizon(self):
        basis = BasisDictionary(np.array([1.0]))
        stream = stream_from_rows([], (0.0, 10.0))
        feats = filter_events(stream, "A", basis)
        with pytest.raises(EmptyHorizon):
            assemble_normal_equations(feats, "La", horizon=0.0)

    @pytest.mark.parametrize("seed", [5, 17, 29])
    def test_quadratic_form_matches_quadrature(self, seed):
        rng = np.random.default_rng(seed)
        T = 10.0
        n_ev = int(rng.integers(20, 50))
        t = np.sort(rng.uniform(0, T, n_ev))
        agents = rng.choice(["A", "B"], n_ev)
        kinds = rng.choice(EVENT_TYPES, n_ev)
        delta = np.where(kinds == "P+", 1.0, np.where(kinds == "P-", -1.0, 0.0))
        stream = EventStream(t, agents, kinds, delta, (0.0, T))
        basis = BasisDictionary(np.array([0.7, 3.0]))
        edges = np.array([0.0, 4.0, T])
        K, L = 2, 2
        feats = filter_events(stream, "A", basis, edges=edges)
        a, b = assemble_normal_equations(feats, "La")
        theta = rng.normal(0.0, 0.3, K + 16 * L)

        def features_at(s):
            row = np.zeros(K + 16 * L)
            k = max(min(np.searchsorted(edges, s, side="left") - 1, K - 1), 0)
            row[k] = 1.0
            for te, ag, kd in zip(stream.t, stream.agent, stream.kind):
                if te >= s:
                    continue
                block = 0 if ag == "A" else 1
                col = K + (block * 8 + TYPE_INDEX[kd]) * L
                row[col : col + L] += basis.decays * np.exp(-basis.decays * (s - te))
            return row

        h = 1e-4
        grid = np.arange(h / 2, T, h)
        lam = np.array([features_at(s) @ theta for s in grid])
        quad_sq = float(np.sum(lam**2) * h / T)
        mask = (stream.agent == "A") & (stream.kind == "La")
        linear = 2.0 / T * sum(features_at(te) @ theta for te in stream.t[mask])
        oracle = quad_sq - linear
        exact = contrast_value(a, b, theta)
        assert exact == pytest.approx(oracle, rel=1e-4, abs=1e-6)

    def test_gram_is_symmetric_psd(self):
        rng = np.random.default_rng(3)
        t = np.sort(rng.uniform(0, 50.0, 200))
        kinds = rng.choice(EVENT_TYPES, 200)
        delta = np.where(kinds == "P+", 1.0, np.where(kinds == "P-", -1.0, 0.0))
        stream = EventStream(t, np.full(200, "A", dtype=object), kinds, delta, (0.0, 50.0))
        basis = BasisDictionary(np.array([0.5, 2.0, 9.0]))
        feats = filter_events(stream, "A", basis)
        a, _ = assemble_normal_equations(feats, "La")
        assert np.array_equal(a, a.T)
        eigs = np.linalg.eigvalsh(a)
        assert eigs.min() > -1e-12


class TestSolve:
    def test_identity_system(self):
        theta = solve_least_squares(np.eye(2), np.array([1.0, 2.0]), ridge=0.0)
        assert np.allclose(theta, [1.0, 2.0])

    def test_singular_system(self):
        with pytest.raises(SingularSystem):
            solve_least_squares(np.zeros((2, 2)), np.ones(2), ridge=0.0)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            solve_least_squares(np.eye(2), np.ones(3))

    def test_default_ridge_handles_near_singular(self):
        a = np.array([[1.0, 1.0], [1.0, 1.0 + 1e-14]])
        theta = solve_least_squares(a, np.array([1.0, 1.0]))
        assert np.all(np.isfinite(theta))


class TestInvarianceProperties:
    def test_decomposability_joint_equals_separate(self):
        stream = simulate_thinning(toy_model(0.5, 0.2, 0.3), 2000.0, seed=31)
        basis = BasisDictionary(np.array([1.0]))
        feats = filter_events(stream, "A", basis)
        a, b_up = assemble_normal_equations(feats, "P+")
        _, b_dn = assemble_normal_equations(feats, "P-")
        sep_up = solve_least_squares(a, b_up, ridge=1e-10)
        sep_dn = solve_least_squares(a, b_dn, ridge=1e-10)
        dim = a.shape[0]
        joint_a = np.zeros((2 * dim, 2 * dim))
        joint_a[:dim, :dim] = a
        joint_a[dim:, dim:] = a
        joint = solve_least_squares(
            joint_a, np.concatenate([b_up, b_dn]), ridge=1e-10
        )
        assert np.allclose(joint[:dim], sep_up, atol=1e-12)
        assert np.allclose(joint[dim:], sep_dn, atol=1e-12)

    def test_time_shift_invariance(self):
        stream = simulate_thinning(toy_model(0.5, 0.2, 0.3), 1000.0, seed=32)
        basis = BasisDictionary(np.array([1.0]))
        fit = fit_agent_vs_market(stream, "A", basis, min_events=10)
        shifted = EventStream(
            stream.t + 7.0, stream.agent, stream.kind, stream.delta,
            (7.0, 1007.0), stream.day,
        )
        fit2 = fit_agent_vs_market(shifted, "A", basis, min_events=10)
        assert np.allclose(fit.self_coeffs, fit2.self_coeffs, atol=1e-10)
        assert np.allclose(fit.baseline, fit2.baseline, atol=1e-10)

    def test_consistency_error_shrinks_with_horizon(self):
        true_phi = np.array([[0.2, 0.3], [0.3, 0.2]])
        basis = BasisDictionary(np.array([1.0, 5.0]))
        model = toy_model(0.5, 0.2, 0.3)

        def ensemble_rms(horizon, seeds):
            errs = []
            for seed in seeds:
                stream = simulate_thinning(model, horizon, seed=seed)
                fit = fit_agent_vs_market(stream, "A", basis, min_events=1000)
                errs.append(fit.phi_self()[:2, :2] - true_phi)
            return float(np.sqrt(np.mean(np.square(errs))))

        short = ensemble_rms(5e4, (41, 42, 43))
        long = ensemble_rms(2e5, (44, 45, 46))
        assert long < short


class TestAgentFit:
    def test_delta_hat_mean(self):
        rows = [
            (1.0, "A", "P+", 1.0),
            (2.0, "A", "P+", 2.0),
            (3.0, "A", "P+", 1.0),
            (4.0, "A", "P-", -1.0),
            (5.0, "A", "P-", -2.0),
            (6.0, "A", "P-", -1.0),
        ]
        stream = stream_from_rows(rows, (0.0, 10.0))
        delta_hat = estimate_jump_sizes(stream, "A")
        assert delta_hat[TYPE_INDEX["P+"]] == pytest.approx(4.0 / 3.0)
        assert delta_hat[TYPE_INDEX["P-"]] == pytest.approx(-4.0 / 3.0)
        assert not delta_hat[2:].any()

    def test_delta_hat_defaults_for_tiny_samples(self):
        rows = [(1.0, "A", "P+", 3.0), (2.0, "A", "P+", 3.0)]
        stream = stream_from_rows(rows, (0.0, 10.0))
        delta_hat = estimate_jump_sizes(stream, "A")
        assert delta_hat[TYPE_INDEX["P+"]] == 1.0
        assert delta_hat[TYPE_INDEX["P-"]] == -1.0

    def test_absent_agent_raises(self):
        stream = stream_from_rows([(1.0, "B", "La", 0.0)], (0.0, 10.0))
        basis = BasisDictionary(np.array([1.0]))
        with pytest.raises(InsufficientEvents):
            fit_agent_vs_market(stream, "A", basis, min_events=1)

    def test_symmetric_agents_agree(self):
        model = two_agent_symmetric_market()
        stream = simulate_thinning(model, 2e4, seed=55)
        basis = BasisDictionary(np.array([1.0]))
        fit_a = fit_agent_vs_market(stream, "A", basis, min_events=1000)
        fit_b = fit_agent_vs_market(stream, "B", basis, min_events=1000)
        assert np.allclose(fit_a.phi_self(), fit_b.phi_self(), atol=0.08)
        assert np.allclose(fit_a.phi_market(), fit_b.phi_market(), atol=0.08)
        # and both recover the generating couplings
        up, dn = TYPE_INDEX["P+"], TYPE_INDEX["P-"]
        assert fit_a.phi_self()[up, dn] == pytest.approx(0.2, abs=0.06)
        assert fit_a.phi_market()[up, up] == pytest.approx(0.15, abs=0.06)

    def test_remainder_aggregation(self):
        rows = [(1.0, "A", "La", 0.0), (2.0, "B", "La", 0.0), (3.0, "C", "Ta", 0.0)]
        stream = stream_from_rows(rows, (0.0, 10.0))
        pooled = aggregate_remainder(stream, ["A"])
        assert pooled.agents() == ("A", REST_AGENT)
        assert pooled.counts()[(REST_AGENT, "La")] == 1
        assert pooled.counts()[(REST_AGENT, "Ta")] == 1


def synthetic_fit(agent, seed, scale=0.02):
    rng = np.random.default_rng(seed)
    basis = BasisDictionary(np.array([1.0, 4.0]))
    delta_hat = np.zeros(8)
    delta_hat[TYPE_INDEX["P+"]] = 1.0
    delta_hat[TYPE_INDEX["P-"]] = -1.0
    return AgentFitResult(
        agent=agent,
        day="d0",
        basis=basis,
        edges=np.array([0.0, 100.0]),
        baseline=rng.uniform(0.1, 0.5, (8, 1)),
        self_coeffs=rng.normal(0.0, scale, (8, 8, 2)),
        market_coeffs=rng.normal(0.0, scale, (8, 8, 2)),
        delta_hat=delta_hat,
        contrast=np.zeros(8),
        n_events=1000,
    )


class TestAssembleGlobal:
    def test_single_agent_equals_self_block(self):
        fit = synthetic_fit("A", 1)
        lam = np.full(8, 0.5)
        gm = assemble_global([fit], lam)
        assert np.array_equal(gm.model.kernels.coeffs, fit.self_coeffs)
        assert np.array_equal(gm.delta, fit.delta_hat)

    def test_two_agent_blocks_bitwise(self):
        fit_a, fit_b = synthetic_fit("A", 2), synthetic_fit("B", 3)
        lam = np.full(16, 0.5)
        gm = assemble_global([fit_a, fit_b], lam)
        coeffs = gm.model.kernels.coeffs
        assert np.array_equal(coeffs[0:8, 0:8], fit_a.self_coeffs)
        assert np.array_equal(coeffs[0:8, 8:16], fit_a.market_coeffs)
        assert np.array_equal(coeffs[8:16, 8:16], fit_b.self_coeffs)
        assert np.array_equal(coeffs[8:16, 0:8], fit_b.market_coeffs)

    def test_absent_agent_zero_blocks_and_restricted_R(self):
        fit_a, fit_b = synthetic_fit("A", 4), synthetic_fit("B", 5)
        lam2 = np.full(16, 0.5)
        gm2 = assemble_global([fit_a, fit_b], lam2, agents=["A", "B"])
        lam3 = np.concatenate([lam2, np.zeros(8)])
        gm3 = assemble_global([fit_a, fit_b], lam3, agents=["A", "B", "C"])
        coeffs = gm3.model.kernels.coeffs
        assert not coeffs[16:24].any()
        assert not coeffs[:, 16:24].any()
        assert any("absent" in note for note in gm3.notes)
        r3 = gm3.summary.r
        assert np.allclose(r3[:16, :16], gm2.summary.r, atol=1e-10)
        assert np.allclose(r3[16:24, 16:24], np.eye(8), atol=1e-12)

    def test_lambda_dimension_checked(self):
        with pytest.raises(DimensionMismatch):
            assemble_global([synthetic_fit("A", 6)], np.ones(4))

    def test_round_trip_serialization(self):
        fit = synthetic_fit("A", 7)
        clone = AgentFitResult.from_dict(fit.to_dict())
        assert np.array_equal(clone.self_coeffs, fit.self_coeffs)
        assert np.array_equal(clone.market_coeffs, fit.market_coeffs)
        assert np.array_equal(clone.baseline, fit.baseline)
        assert clone.agent == fit.agent

    def test_empirical_intensities_ordering(self):
        rows = [(1.0, "A", "La", 0.0), (2.0, "A", "La", 0.0), (3.0, "B", "P+", 1.0)]
        stream = stream_from_rows(rows, (0.0, 10.0))
        lam = empirical_intensities(stream, ["A", "B"])
        assert lam[TYPE_INDEX["La"]] == pytest.approx(0.2)
        assert lam[8 + TYPE_INDEX["P+"]] == pytest.approx(0.1)
        assert lam.sum() == pytest.approx(0.3)
