import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import fixture_graph
from ppacdc import quantizer as qz
from ppacdc.graph import build_digraph, complete_graph, cycle_graph, diameter, random_strongly_connected
from ppacdc.protocol import ProtocolParams
from ppacdc.rng import uniform_vector
from ppacdc.simulator import (
    AgentEngine,
    Mode,
    SimConfig,
    VectorEngine,
    bits_per_round,
    consensus_error,
    run,
    write_trace_csv,
)

TWO = build_digraph(2, [(0, 1), (1, 0)])


def params(**kw):
    base = dict(gamma=0.2, alpha=0.2, b=8, dbar=4)
    base.update(kw)
    return ProtocolParams(**base)


def assert_traces_identical(a, b):
    assert len(a.snapshots) == len(b.snapshots)
    for sa, sb in zip(a.snapshots, b.snapshots):
        for name in ("x", "s", "w", "M", "m", "ex", "es"):
            np.testing.assert_array_equal(getattr(sa, name), getattr(sb, name), err_msg=name)
        assert (sa.k, sa.delta, sa.sigma, sa.cum_bits) == (sb.k, sb.delta, sb.sigma, sb.cum_bits)
    assert (a.terminated, a.k_star, a.converged, a.rounds_to_tol, a.total_bits) == (
        b.terminated, b.k_star, b.converged, b.rounds_to_tol, b.total_bits
    )
    assert a.zetas == b.zetas


# -- helpers ---------------------------------------------------------------------


@pytest.mark.parametrize(
    "g, b, bits", [(cycle_graph(5), 8, 170), (TWO, 2, 20), (complete_graph(5), 16, 1320)]
)
def test_bits_per_round(g, b, bits):
    assert bits_per_round(g, b) == bits


@pytest.mark.parametrize(
    "x, ave, expected",
    [((5, 5), 5, (0.0, 0.0)), ((0, 10), 5, (math.sqrt(50), 10.0)), ((1, 2, 3), 2, (math.sqrt(2), 2.0))],
)
def test_consensus_error(x, ave, expected):
    assert consensus_error(x, ave) == pytest.approx(expected, rel=1e-15)


def test_consensus_error_rejects_empty():
    with pytest.raises(ValueError):
        consensus_error([], 0.0)


# -- config validation -------------------------------------------------------------


def test_config_rejects_bad_setups():
    g = cycle_graph(5)
    x0 = [1.0] * 5
    with pytest.raises(ValueError, match="strongly connected"):
        SimConfig(build_digraph(3, [(0, 1), (1, 2)]), params(dbar=4), [0.0] * 3, 10)
    with pytest.raises(ValueError, match="diameter"):
        SimConfig(g, params(dbar=3), x0, 10)
    with pytest.raises(ValueError, match="length"):
        SimConfig(g, params(), x0[:4], 10)
    with pytest.raises(ValueError, match="epsilon"):
        SimConfig(g, params(), x0, 10, mode=Mode.EPSILON_STOP)
    with pytest.raises(ValueError, match="epsilon"):
        SimConfig(g, params(epsilon=0.1), x0, 10, mode="asymptotic")
    with pytest.raises(ValueError, match="engine"):
        SimConfig(g, params(), x0, 10, engine="gpu")
    with pytest.raises(ValueError):
        SimConfig(g, params(), [math.nan] + x0[1:], 10)


def test_mode_inferred_from_epsilon():
    g = cycle_graph(5)
    assert SimConfig(g, params(), [0.0] * 5, 1).mode is Mode.ASYMPTOTIC
    assert SimConfig(g, params(epsilon=1e-2), [0.0] * 5, 1).mode is Mode.EPSILON_STOP


# -- runs ------------------------------------------------------------------------


def test_two_node_fine_quantizer_reaches_average():
    p = params(b=32, delta0=1e-6, dbar=1)
    trace = run(SimConfig(TWO, p, [0.0, 10.0], 20_000))
    assert trace.converged
    assert trace.final.err_inf <= 1e-8
    np.testing.assert_allclose(trace.final.x, [5.0, 5.0], atol=1e-8)
    assert trace.err_inf[trace.rounds_to_tol] <= 1e-8
    assert np.all(trace.err_inf[: trace.rounds_to_tol] > 1e-8)


@pytest.mark.parametrize("c", [0.0, 42.0, -7.0])
def test_on_level_consensus_is_a_fixed_point(c):
    trace = run(SimConfig(cycle_graph(5), params(b=4), [c] * 5, 50, convergence_tol=-1.0))
    assert np.all(trace.err_inf == 0.0)
    for snap in trace.snapshots:
        np.testing.assert_array_equal(snap.x, np.full(5, c))
        np.testing.assert_array_equal(snap.s, np.zeros(5))


def test_small_quantizer_starts_by_zooming_out():
    x0 = uniform_vector(0, 5, 0.0, 1000.0)
    trace = run(SimConfig(cycle_graph(5), params(b=3, dbar=4), x0, 200))
    assert trace.zetas[:3] == [1, 1, 1]
    deltas = [float(rec.delta[0]) for rec in trace.syncs[:3]]
    assert deltas == sorted(deltas) and deltas[0] > 1.0


@pytest.mark.parametrize(
    "g, p, x0, rounds",
    [
        (cycle_graph(5), params(b=3), uniform_vector(1, 5, 0, 1000), 300),
        (random_strongly_connected(7, 0.3, 2), params(b=6, dbar=6, epsilon=1e-2), uniform_vector(2, 7, 0, 1000), 2000),
        (TWO, params(b=2, alpha=4.0, dbar=1), [0.0, 1000.0], 200),
        (cycle_graph(4), params(b=5, init_coordination="zeros", dbar=3, sigma0=3.0), [1, 2, 3, 4], 300),
        (cycle_graph(5), params(b=5, quantized=False), uniform_vector(3, 5, 0, 10), 100),
    ],
)
def test_vector_and_agent_engines_agree_bit_for_bit(g, p, x0, rounds):
    a = run(SimConfig(g, p, x0, rounds, engine="vector"))
    b = run(SimConfig(g, p, x0, rounds, engine="agent"))
    assert_traces_identical(a, b)


def test_runs_are_deterministic():
    g = random_strongly_connected(10, 0.2, 8)
    cfg = SimConfig(g, params(b=4, dbar=10), uniform_vector(8, 10, 0, 1000), 500)
    assert_traces_identical(run(cfg), run(cfg))


def test_snapshot_thinning_keeps_per_round_metrics():
    cfg = dict(graph=cycle_graph(5), params=params(b=6), x0=uniform_vector(4, 5, 0, 1000), max_rounds=123)
    full = run(SimConfig(**cfg, convergence_tol=0.0))
    thin = run(SimConfig(**cfg, convergence_tol=0.0, snapshot_every=10))
    assert [s.k for s in thin.snapshots] == list(range(0, 123, 10)) + [123]
    np.testing.assert_array_equal(full.err_l2, thin.err_l2)
    assert full.total_bits == thin.total_bits == 123 * bits_per_round(cycle_graph(5), 6)


def test_cum_bits_and_mass_every_snapshot():
    g = fixture_graph("rand5")
    x0 = uniform_vector(5, 5, 0, 1000)
    trace = run(SimConfig(g, params(b=4, dbar=3), x0, 400))
    bpr = bits_per_round(g, 4)
    for snap in trace.snapshots[:-1]:
        assert snap.cum_bits == (snap.k + 1) * bpr
    assert trace.final.cum_bits == trace.total_bits == trace.rounds_executed * bpr
    total0 = math.fsum(x0)
    assert np.max(np.abs(trace.mass - total0)) <= 1e-9 * max(1.0, abs(total0))


def test_epsilon_stop_halts_on_schedule():
    g = fixture_graph("rand5")
    x0 = uniform_vector(6, 5, 0, 1000)
    trace = run(SimConfig(g, params(b=8, dbar=3, gamma=0.1, epsilon=1e-2), x0, 5000))
    assert trace.terminated
    assert trace.k_star % 3 == 0 and trace.k_star > 0
    assert trace.rounds_executed == trace.k_star
    assert np.all(trace.syncs[-1].stop)
    assert not any(rec.stop.any() for rec in trace.syncs[:-1])
    assert np.max(np.abs(trace.final.x - trace.x_ave)) <= 1e-2


def test_window_agreement_against_global_oracle():
    g = random_strongly_connected(9, 0.15, 21)
    d = diameter(g)
    p = params(b=5, dbar=d)
    eng = VectorEngine(g, p, uniform_vector(21, 9, 0, 1000))
    for k in range(d):
        eng.step()
    for _ in range(4):
        eng.sync(d)
        w0, M0, m0 = eng.coordination()
        for _ in range(d):
            eng.step()
        w, M, m = eng.coordination()
        np.testing.assert_array_equal(w, np.full(9, w0.max()))
        np.testing.assert_array_equal(M, np.full(9, M0.max()))
        np.testing.assert_array_equal(m, np.full(9, m0.min()))


def test_wire_discipline_hidden_perturbation():
    # moving agent 0's x within its quantization cell changes none of its codes,
    # so no other agent's update may change
    g = random_strongly_connected(6, 0.3, 13)
    p = params(b=6, dbar=6)
    x0 = uniform_vector(13, 6, 0, 40)
    f0 = p.initial_frame()
    level = qz.quantize(x0[0], f0)
    nudged = list(x0)
    nudged[0] = level + 0.3 * (x0[0] - level)
    assert qz.encode(nudged[0], f0) == qz.encode(x0[0], f0)
    base, other = AgentEngine(g, p, x0), AgentEngine(g, p, nudged)
    base.step()
    other.step()
    assert base.outbox == other.outbox
    np.testing.assert_array_equal(base.x[1:], other.x[1:])
    np.testing.assert_array_equal(base.s[1:], other.s[1:])
    assert base.x[0] != other.x[0]


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 8), st.floats(0.0, 1.0), st.integers(0, 2**32), st.integers(2, 16),
       st.sampled_from([0.2, 1.0, 4.0]))
def test_mass_conserved_per_round(n, prob, seed, b, alpha):
    g = random_strongly_connected(n, prob, seed)
    x0 = uniform_vector(seed, n, -1000, 1000)
    trace = run(SimConfig(g, params(b=b, alpha=alpha, dbar=n), x0, 60, convergence_tol=0.0))
    total0 = math.fsum(x0)
    assert np.max(np.abs(trace.mass - total0)) <= 1e-9 * max(1.0, abs(total0))


def test_trace_csv(tmp_path):
    trace = run(SimConfig(TWO, params(b=4, dbar=1), [0.1, 0.9], 5, convergence_tol=0.0))
    path = tmp_path / "trace.csv"
    write_trace_csv(trace, path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["k", "agent", "x", "s", "delta", "sigma", "w", "M", "m", "err_l2", "err_inf", "cum_bits"]
    assert len(rows) == 1 + 2 * len(trace.snapshots)
    last = trace.final
    assert float(rows[-1][2]) == last.x[1]  # 17 significant digits round-trip exactly
    assert int(rows[-1][-1]) == trace.total_bits
    assert "\r" not in path.read_text()
