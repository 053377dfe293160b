"""Quantized average consensus over digraphs with dynamic quantizer framing."""

from ppacdc.graph import Digraph, build_digraph, random_strongly_connected
from ppacdc.quantizer import QuantizerFrame
from ppacdc.protocol import AgentState, ProtocolParams, RoundMessage
from ppacdc.simulator import SimConfig, Trace, run

__all__ = [
    "AgentState",
    "Digraph",
    "ProtocolParams",
    "QuantizerFrame",
    "RoundMessage",
    "SimConfig",
    "Trace",
    "build_digraph",
    "random_strongly_connected",
    "run",
]

__version__ = "0.1.0"
