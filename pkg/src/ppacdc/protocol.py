"""Per-agent state machine of the quantized surplus-consensus protocol.

Each round an agent broadcasts one :class:`RoundMessage` holding four b-bit
codes (state, surplus, running max, running min) and a 2-bit zoom vote.
Every ``dbar`` rounds all agents run :func:`sync_update`: check the stopping
rule, agree on the zoom decision, move the quantizer midpoint, and restart the
max/min coordination.

The rules are written once as broadcasting kernels (``*_values``) that the
vectorised engine in :mod:`ppacdc.simulator` calls directly; the scalar
functions below wrap the same kernels.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence

import numpy as np

from ppacdc import quantizer as qz
from ppacdc.quantizer import QuantizerFrame

WIRE_VOTE_BITS = 2


class InitCoordination(str, Enum):
    FROM_STATE = "from_state"
    ZEROS = "zeros"


@dataclass(frozen=True)
class ProtocolParams:
    gamma: float
    alpha: float
    b: int
    dbar: int
    epsilon: float | None = None
    init_coordination: InitCoordination = InitCoordination.FROM_STATE
    delta0: float = 1.0
    sigma0: float = 0.0
    # False replaces every quantizer by the identity (oracle comparisons only).
    quantized: bool = True

    def __post_init__(self) -> None:
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if int(self.dbar) != self.dbar or self.dbar < 1:
            raise ValueError("dbar must be an integer >= 1")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError("epsilon must be positive when given")
        object.__setattr__(self, "init_coordination", InitCoordination(self.init_coordination))
        self.initial_frame()  # validates b, delta0, sigma0

    def initial_frame(self) -> QuantizerFrame:
        return QuantizerFrame(self.b, self.delta0, self.sigma0)

    def is_sync_instant(self, k: int) -> bool:
        return k > 0 and k % self.dbar == 0

    @property
    def message_bits(self) -> int:
        return 4 * self.b + WIRE_VOTE_BITS


@dataclass(frozen=True)
class AgentState:
    x: float
    s: float
    w: int
    M: float
    m: float
    stopped: bool = False


@dataclass(frozen=True)
class RoundMessage:
    code_x: int
    code_s: int
    w: int
    code_M: int
    code_m: int

    @staticmethod
    def size_bits(b: int) -> int:
        return 4 * b + WIRE_VOTE_BITS


@dataclass(frozen=True)
class DecodedMessage:
    x: float
    s: float
    w: int
    M: float
    m: float


@dataclass(frozen=True)
class FrameDecision:
    zeta: int
    new_frame: QuantizerFrame
    stop: bool


# -- kernels -------------------------------------------------------------------


def classify_values(x, b: int, delta, sigma, alpha: float):
    """Zoom vote: 1 outside the range, -1 well inside it, 0 in between."""
    dev = np.abs(x - sigma)
    q = qz.range_factor(b) * delta
    return np.where(dev > q, 1, np.where(dev < q / (1 + alpha), -1, 0)).astype(np.int8)


def stop_values(M, m, delta, epsilon: float):
    return (M - m) <= epsilon - delta


def midpoint_values(M, m):
    return (M + m) / 2


# -- scalar API ----------------------------------------------------------------


def classify_region(x: float, f: QuantizerFrame, alpha: float) -> int:
    return int(classify_values(x, f.b, f.delta, f.sigma, alpha))


def init_agent(x0: float, params: ProtocolParams, frame0: QuantizerFrame) -> AgentState:
    if params.init_coordination is InitCoordination.ZEROS:
        return AgentState(x=float(x0), s=0.0, w=0, M=0.0, m=0.0)
    level = qz.quantize(x0, frame0)
    return AgentState(
        x=float(x0), s=0.0, w=classify_region(x0, frame0, params.alpha), M=level, m=level
    )


def make_message(a: AgentState, frame: QuantizerFrame) -> RoundMessage:
    if a.stopped:
        raise RuntimeError("a stopped agent does not transmit")
    surplus_frame = frame.with_sigma(0.0)
    return RoundMessage(
        code_x=qz.encode(a.x, frame),
        code_s=qz.encode(a.s, surplus_frame),
        w=a.w,
        code_M=qz.encode(a.M, frame),
        code_m=qz.encode(a.m, frame),
    )


def read_message(msg: RoundMessage, frame: QuantizerFrame) -> DecodedMessage:
    return DecodedMessage(
        x=qz.decode(msg.code_x, frame),
        s=qz.decode(msg.code_s, frame.with_sigma(0.0)),
        w=msg.w,
        M=qz.decode(msg.code_M, frame),
        m=qz.decode(msg.code_m, frame),
    )


def state_update(
    a: AgentState,
    received: Sequence[tuple[float, float]],
    r_row: Sequence[float],
    c_row: Sequence[float],
    gamma: float,
) -> AgentState:
    """One surplus-consensus step from decoded values.

    ``received[0]`` must be the agent's own quantized ``(x, s)`` pair and
    ``r_row[0]``/``c_row[0]`` its self weights; the remaining entries are the
    in-neighbors in the same order. The own quantization error is added back,
    so the update equals ``x + gamma*s + [(R - I) x_q]_j`` and conserves
    ``x + s`` summed over the network.
    """
    if not (len(received) == len(r_row) == len(c_row)):
        raise ValueError(
            f"weight rows ({len(r_row)}, {len(c_row)}) do not match {len(received)} received values"
        )
    if a.stopped:
        return a
    acc_x = 0.0
    acc_s = 0.0
    for (xq, sq), r, c in zip(received, r_row, c_row):
        acc_x = acc_x + r * xq
        acc_s = acc_s + c * sq
    own_xq, own_sq = received[0]
    x_next = acc_x + gamma * a.s + (a.x - own_xq)
    s_next = acc_s + a.x - x_next + (a.s - own_sq)
    return replace(a, x=x_next, s=s_next)


def merge_coordination(a: AgentState, received: Sequence[tuple[int, float, float]]) -> AgentState:
    if a.stopped:
        return a
    w, M, m = a.w, a.M, a.m
    for wi, Mi, mi in received:
        w = max(w, wi)
        M = max(M, Mi)
        m = min(m, mi)
    return replace(a, w=int(w), M=float(M), m=float(m))


def sync_update(
    a: AgentState, frame: QuantizerFrame, params: ProtocolParams, k: int
) -> tuple[AgentState, FrameDecision]:
    """Frame adjustment at a sync instant ``k``.

    The stop test uses the step size that produced the agreed ``M`` and ``m``.
    On stop the agent freezes and keeps its frame; otherwise the zoom decision
    is the agreed vote, the midpoint moves to ``(M + m) / 2`` and the vote and
    extremes restart from the agent's current state under the new frame.
    """
    if not params.is_sync_instant(k):
        raise ValueError(f"round {k} is not a sync instant for dbar={params.dbar}")
    zeta = int(a.w)
    if params.epsilon is not None and bool(stop_values(a.M, a.m, frame.delta, params.epsilon)):
        return replace(a, stopped=True), FrameDecision(zeta, frame, True)
    delta = float(qz.zoom_delta(frame.delta, zeta, params.alpha))
    new_frame = QuantizerFrame(frame.b, delta, float(midpoint_values(a.M, a.m)))
    level = qz.quantize(a.x, new_frame)
    reset = replace(a, w=classify_region(a.x, new_frame, params.alpha), M=level, m=level)
    return reset, FrameDecision(zeta, new_frame, False)
