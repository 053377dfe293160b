"""Synchronous round engine for the quantized consensus protocol.

Round ``k`` runs in this order:

1. asymptotic mode only: halt if ``max_i x_i - min_i x_i <= convergence_tol``;
2. at sync instants (``k > 0``, ``k % dbar == 0``): every agent runs
   :func:`ppacdc.protocol.sync_update`; epsilon mode halts if the stop rule fired;
3. every agent encodes its message; only codes and the 2-bit vote cross edges;
4. receivers decode with their own frame copy, update ``(x, s)``, and merge
   the coordination variables.

Two interchangeable engines implement steps 2-4. ``"vector"`` keeps the
network in numpy arrays and is what experiments use. ``"agent"`` drives one
:class:`~ppacdc.protocol.AgentState` per node through the scalar protocol
functions and exchanges :class:`~ppacdc.protocol.RoundMessage` objects. Both
sum neighbor contributions in the same order (self first, then in-neighbors
ascending), so their traces agree bit for bit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from ppacdc import protocol as pc
from ppacdc import quantizer as qz
from ppacdc.graph import Digraph, diameter, is_strongly_connected, pull_weights, push_weights
from ppacdc.protocol import ProtocolParams
from ppacdc.quantizer import QuantizerFrame


class Mode(str, Enum):
    ASYMPTOTIC = "asymptotic"
    EPSILON_STOP = "epsilon_stop"


@dataclass(frozen=True)
class SimConfig:
    graph: Digraph
    params: ProtocolParams
    x0: Sequence[float]
    max_rounds: int
    mode: Mode | None = None  # inferred from params.epsilon when omitted
    convergence_tol: float = 1e-8
    snapshot_every: int = 1
    seed: int = 0  # provenance of x0; the run itself draws no randomness
    engine: str = "vector"

    def __post_init__(self) -> None:
        mode = self.mode
        if mode is None:
            mode = Mode.ASYMPTOTIC if self.params.epsilon is None else Mode.EPSILON_STOP
        mode = Mode(mode)
        if mode is Mode.EPSILON_STOP and self.params.epsilon is None:
            raise ValueError("epsilon_stop mode needs params.epsilon")
        if mode is Mode.ASYMPTOTIC and self.params.epsilon is not None:
            raise ValueError("asymptotic mode runs without epsilon; drop params.epsilon")
        object.__setattr__(self, "mode", mode)
        x0 = np.asarray(self.x0, dtype=float)
        if x0.shape != (self.graph.n,):
            raise ValueError(f"x0 must have length n={self.graph.n}")
        if not np.all(np.isfinite(x0)):
            raise ValueError("x0 must be finite")
        object.__setattr__(self, "x0", tuple(float(v) for v in x0))
        if not is_strongly_connected(self.graph):
            raise ValueError("graph is not strongly connected")
        d = diameter(self.graph)
        if self.params.dbar < d:
            raise ValueError(f"dbar={self.params.dbar} is below the graph diameter {d}")
        if self.max_rounds < 0 or self.snapshot_every < 1:
            raise ValueError("max_rounds must be >= 0 and snapshot_every >= 1")
        if self.engine not in ENGINES:
            raise ValueError(f"unknown engine {self.engine!r}")


@dataclass
class RoundSnapshot:
    k: int
    x: np.ndarray
    s: np.ndarray
    delta: float
    sigma: float
    w: np.ndarray
    M: np.ndarray
    m: np.ndarray
    err_l2: float
    err_inf: float
    ex: np.ndarray
    es: np.ndarray
    cum_bits: int


@dataclass
class SyncRecord:
    """Per-agent outcome of one sync instant (frames are the post-update ones)."""

    k: int
    zeta: np.ndarray
    stop: np.ndarray
    delta: np.ndarray
    sigma: np.ndarray

    @property
    def agreed(self) -> bool:
        return bool(
            np.all(self.zeta == self.zeta[0])
            and np.all(self.stop == self.stop[0])
            and np.all(self.delta == self.delta[0])
            and np.all(self.sigma == self.sigma[0])
        )


@dataclass
class Trace:
    x_ave: float
    bits_per_round: int
    snapshots: list[RoundSnapshot] = field(default_factory=list)
    syncs: list[SyncRecord] = field(default_factory=list)
    terminated: bool = False
    k_star: int | None = None
    converged: bool = False
    rounds_to_tol: int | None = None
    rounds_executed: int = 0
    total_bits: int = 0
    # one entry per visited round k = 0..rounds_executed
    err_l2: np.ndarray = field(default_factory=lambda: np.zeros(0))
    err_inf: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mass: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def final(self) -> RoundSnapshot:
        return self.snapshots[-1]

    @property
    def frames_agreed(self) -> bool:
        return all(rec.agreed for rec in self.syncs)

    @property
    def zetas(self) -> list[int]:
        return [int(rec.zeta[0]) for rec in self.syncs]


def bits_per_round(g: Digraph, b: int) -> int:
    return g.m * pc.RoundMessage.size_bits(b)


def consensus_error(x, x_ave: float) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("empty state vector")
    return float(np.linalg.norm(x - x_ave)), float(x.max() - x.min())


def _neighbor_slots(g: Digraph, R: np.ndarray, C: np.ndarray):
    """Padded per-receiver sender table: slot 0 is self, then in-neighbors."""
    width = 1 + max(g.in_degree(j) for j in range(g.n))
    idx = np.repeat(np.arange(g.n)[:, None], width, axis=1)
    pad = np.ones((g.n, width), dtype=bool)
    rw = np.zeros((g.n, width))
    cw = np.zeros((g.n, width))
    for j in range(g.n):
        senders = (j,) + g.in_adj[j]
        idx[j, : len(senders)] = senders
        pad[j, : len(senders)] = False
        rw[j, : len(senders)] = [R[j, i] for i in senders]
        cw[j, : len(senders)] = [C[j, i] for i in senders]
    return idx, pad, rw, cw


class VectorEngine:
    def __init__(self, g: Digraph, params: ProtocolParams, x0: Sequence[float]) -> None:
        self.params = params
        self.n = g.n
        self.idx, self.pad, self.rw, self.cw = _neighbor_slots(g, pull_weights(g), push_weights(g))
        self.own = self.pad.copy()
        self.own[:, 0] = True  # own coordination values are used raw, not decoded
        f0 = params.initial_frame()
        self.delta = np.full(g.n, f0.delta)
        self.sigma = np.full(g.n, f0.sigma)
        self.x = np.array(x0, dtype=float)
        self.s = np.zeros(g.n)
        if params.init_coordination is pc.InitCoordination.ZEROS:
            self.w = np.zeros(g.n, dtype=np.int8)
            self.M = np.zeros(g.n)
        else:
            self.w = pc.classify_values(self.x, params.b, self.delta, self.sigma, params.alpha)
            self.M = qz.quantize_values(self.x, params.b, self.delta, self.sigma)
        self.m = self.M.copy()

    def sync(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        p = self.params
        zeta = self.w.copy()
        if p.epsilon is None:
            stop = np.zeros(self.n, dtype=bool)
        else:
            stop = pc.stop_values(self.M, self.m, self.delta, p.epsilon)
        go = ~stop
        delta = np.where(go, qz.zoom_delta(self.delta, zeta, p.alpha), self.delta)
        sigma = np.where(go, pc.midpoint_values(self.M, self.m), self.sigma)
        level = qz.quantize_values(self.x, p.b, delta, sigma)
        self.w = np.where(go, pc.classify_values(self.x, p.b, delta, sigma, p.alpha), self.w).astype(
            np.int8
        )
        self.M = np.where(go, level, self.M)
        self.m = np.where(go, level, self.m)
        self.delta, self.sigma = delta, sigma
        return zeta, stop

    def quantization_errors(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.params.quantized:
            return np.zeros(self.n), np.zeros(self.n)
        b = self.params.b
        return (
            self.x - qz.quantize_values(self.x, b, self.delta, self.sigma),
            self.s - qz.quantize_values(self.s, b, self.delta, 0.0),
        )

    def step(self) -> tuple[np.ndarray, np.ndarray]:
        p = self.params
        b, idx = p.b, self.idx
        d, sg = self.delta[:, None], self.sigma[:, None]
        if p.quantized:
            codes_x = qz.encode_values(self.x, b, self.delta, self.sigma)
            codes_s = qz.encode_values(self.s, b, self.delta, 0.0)
            codes_M = qz.encode_values(self.M, b, self.delta, self.sigma)
            codes_m = qz.encode_values(self.m, b, self.delta, self.sigma)
            xq = qz.decode_values(codes_x[idx], b, d, sg)
            sq = qz.decode_values(codes_s[idx], b, d, 0.0)
            Mq = qz.decode_values(codes_M[idx], b, d, sg)
            mq = qz.decode_values(codes_m[idx], b, d, sg)
        else:
            xq, sq, Mq, mq = self.x[idx], self.s[idx], self.M[idx], self.m[idx]
        acc_x = np.zeros(self.n)
        acc_s = np.zeros(self.n)
        for t in range(idx.shape[1]):
            acc_x = acc_x + self.rw[:, t] * xq[:, t]
            acc_s = acc_s + self.cw[:, t] * sq[:, t]
        ex = self.x - xq[:, 0]
        es = self.s - sq[:, 0]
        x_next = acc_x + p.gamma * self.s + ex
        s_next = acc_s + self.x - x_next + es
        self.w = self.w[idx].max(axis=1)
        self.M = np.where(self.own, self.M[:, None], Mq).max(axis=1)
        self.m = np.where(self.own, self.m[:, None], mq).min(axis=1)
        self.x, self.s = x_next, s_next
        return ex, es

    def coordination(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.w.copy(), self.M.copy(), self.m.copy()


class AgentEngine:
    """Reference engine: one scalar state machine per agent, messages as codes."""

    def __init__(self, g: Digraph, params: ProtocolParams, x0: Sequence[float]) -> None:
        self.g = g
        self.params = params
        self.n = g.n
        R, C = pull_weights(g), push_weights(g)
        self.senders = [(j,) + g.in_adj[j] for j in range(g.n)]
        self.r_rows = [[float(R[j, i]) for i in self.senders[j]] for j in range(g.n)]
        self.c_rows = [[float(C[j, i]) for i in self.senders[j]] for j in range(g.n)]
        f0 = params.initial_frame()
        self.frames = [f0] * g.n
        self.agents = [pc.init_agent(v, params, f0) for v in x0]

    @property
    def x(self) -> np.ndarray:
        return np.array([a.x for a in self.agents])

    @property
    def s(self) -> np.ndarray:
        return np.array([a.s for a in self.agents])

    @property
    def delta(self) -> np.ndarray:
        return np.array([f.delta for f in self.frames])

    @property
    def sigma(self) -> np.ndarray:
        return np.array([f.sigma for f in self.frames])

    def sync(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        zeta, stop = [], []
        for j, a in enumerate(self.agents):
            a, dec = pc.sync_update(a, self.frames[j], self.params, k)
            self.agents[j], self.frames[j] = a, dec.new_frame
            zeta.append(dec.zeta)
            stop.append(dec.stop)
        return np.array(zeta, dtype=np.int8), np.array(stop)

    def quantization_errors(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.params.quantized:
            return np.zeros(self.n), np.zeros(self.n)
        ex = [a.x - qz.quantize(a.x, f) for a, f in zip(self.agents, self.frames)]
        es = [a.s - qz.quantize(a.s, f.with_sigma(0.0)) for a, f in zip(self.agents, self.frames)]
        return np.array(ex), np.array(es)

    def _inbox(self, j: int) -> list[pc.DecodedMessage]:
        """What agent j reconstructs this round: itself first, then in-neighbors."""
        if not self.params.quantized:
            return [
                pc.DecodedMessage(a.x, a.s, a.w, a.M, a.m)
                for a in (self.agents[i] for i in self.senders[j])
            ]
        return [pc.read_message(self.outbox[i], self.frames[j]) for i in self.senders[j]]

    def step(self) -> tuple[np.ndarray, np.ndarray]:
        if self.params.quantized:
            self.outbox = [pc.make_message(a, f) for a, f in zip(self.agents, self.frames)]
        updated, ex, es = [], [], []
        for j, a in enumerate(self.agents):
            inbox = self._inbox(j)
            ex.append(a.x - inbox[0].x)
            es.append(a.s - inbox[0].s)
            nxt = pc.state_update(
                a, [(msg.x, msg.s) for msg in inbox], self.r_rows[j], self.c_rows[j], self.params.gamma
            )
            nxt = pc.merge_coordination(nxt, [(msg.w, msg.M, msg.m) for msg in inbox[1:]])
            updated.append(nxt)
        self.agents = updated
        return np.array(ex), np.array(es)

    def coordination(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (
            np.array([a.w for a in self.agents], dtype=np.int8),
            np.array([a.M for a in self.agents]),
            np.array([a.m for a in self.agents]),
        )


ENGINES = {"vector": VectorEngine, "agent": AgentEngine}


def run(cfg: SimConfig) -> Trace:
    p, g = cfg.params, cfg.graph
    engine = ENGINES[cfg.engine](g, p, cfg.x0)
    bpr = bits_per_round(g, p.b)
    x_ave = math.fsum(cfg.x0) / g.n
    trace = Trace(x_ave=x_ave, bits_per_round=bpr)
    err_l2, err_inf, mass = [], [], []
    asymptotic = cfg.mode is Mode.ASYMPTOTIC

    def snapshot(k: int, ex: np.ndarray, es: np.ndarray, x: np.ndarray, s: np.ndarray, coord) -> None:
        w, M, m = coord
        trace.snapshots.append(
            RoundSnapshot(
                k=k, x=x, s=s, delta=float(engine.delta[0]), sigma=float(engine.sigma[0]),
                w=w, M=M, m=m, err_l2=err_l2[-1], err_inf=err_inf[-1], ex=ex, es=es,
                cum_bits=trace.total_bits,
            )
        )

    k = 0
    while True:
        x, s = engine.x, engine.s
        l2, spread = consensus_error(x, x_ave)
        err_l2.append(l2)
        err_inf.append(spread)
        mass.append(math.fsum(x) + math.fsum(s))
        if trace.rounds_to_tol is None and spread <= cfg.convergence_tol:
            trace.rounds_to_tol = k
            trace.converged = True
        halt = asymptotic and trace.converged
        if not halt and p.is_sync_instant(k):
            zeta, stop = engine.sync(k)
            trace.syncs.append(SyncRecord(k, zeta, stop, engine.delta.copy(), engine.sigma.copy()))
            if stop.any():
                trace.terminated = True
                trace.k_star = k
                halt = True
        if halt or k == cfg.max_rounds:
            snapshot(k, *engine.quantization_errors(), x, s, engine.coordination())
            break
        coord = engine.coordination()
        ex, es = engine.step()
        trace.total_bits += bpr
        if k % cfg.snapshot_every == 0:
            snapshot(k, ex, es, x, s, coord)
        k += 1

    trace.rounds_executed = k
    trace.err_l2 = np.array(err_l2)
    trace.err_inf = np.array(err_inf)
    trace.mass = np.array(mass)
    return trace


TRACE_HEADER = ["k", "agent", "x", "s", "delta", "sigma", "w", "M", "m", "err_l2", "err_inf", "cum_bits"]


def _num(v: float) -> str:
    return format(float(v), ".17g")


def write_trace_csv(trace: Trace, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(TRACE_HEADER)
        for snap in trace.snapshots:
            for j in range(len(snap.x)):
                out.writerow(
                    [
                        snap.k, j, _num(snap.x[j]), _num(snap.s[j]), _num(snap.delta),
                        _num(snap.sigma), int(snap.w[j]), _num(snap.M[j]), _num(snap.m[j]),
                        _num(snap.err_l2), _num(snap.err_inf), snap.cum_bits,
                    ]
                )
