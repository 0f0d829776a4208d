"""Cycle-accurate netlist interpreter, vectorized over nodes and sequences."""

from __future__ import annotations

import numpy as np

from ..errors import WidthViolationError
from .netlist import ADD, CMP, CONST, INPUT, MUX, OUTPUT, REG, SHL, SUB, Netlist


def output_cone(net: Netlist):
    """Combinational ancestors of the output ports, stopping at sources."""
    seen = set()
    stack = list(net.outputs)
    while stack:
        i = stack.pop()
        if i in seen or net.nodes[i].kind in (INPUT, CONST, REG):
            continue
        seen.add(i)
        stack.extend(net.nodes[i].operands)
    return seen


class Interpreter:
    """Evaluates ``B`` independent copies of a netlist in lockstep."""

    def __init__(self, net: Netlist, check_widths: bool = True):
        self.net = net
        self.check_widths = check_widths
        n = len(net.nodes)
        self.width = np.array([nd.width for nd in net.nodes], dtype=np.int64)
        signed = np.array([nd.signed for nd in net.nodes])
        self.lo = np.where(signed, -(np.int64(1) << (self.width - 1)), 0)
        self.hi = np.where(signed, (np.int64(1) << (self.width - 1)) - 1, (np.int64(1) << self.width) - 1)
        self.const_ids = np.array([nd.id for nd in net.nodes if nd.kind == CONST], dtype=np.int64)
        self.const_vals = np.array([nd.value for nd in net.nodes if nd.kind == CONST], dtype=np.int64)
        self.regs = np.asarray(net.regs, dtype=np.int64)
        self.reg_d = np.array([net.next_state[r] for r in net.regs], dtype=np.int64)
        cone = output_cone(net)
        self.state_schedule = self._schedule(lambda i: net.nodes[i].kind != OUTPUT)
        self.output_schedule = self._schedule(lambda i: i in cone)
        self.n_nodes = n

    def _schedule(self, keep):
        net = self.net
        lv = net.levels()
        sched = []
        for level in range(1, max(lv, default=0) + 1):
            for kind in (SHL, ADD, SUB, CMP, MUX, OUTPUT):
                ids = [nd.id for nd in net.nodes if nd.kind == kind and lv[nd.id] == level and keep(nd.id)]
                if not ids:
                    continue
                ops = np.array([net.nodes[i].operands for i in ids], dtype=np.int64)
                val = np.array([net.nodes[i].value for i in ids], dtype=np.int64)
                sched.append((kind, np.asarray(ids, dtype=np.int64), ops, val[:, None]))
        return sched

    def _eval(self, vals, schedule):
        for kind, ids, ops, val in schedule:
            if kind == SHL:
                r = vals[ops[:, 0]] << val
            elif kind == ADD:
                r = vals[ops[:, 0]] + vals[ops[:, 1]]
            elif kind == SUB:
                r = vals[ops[:, 0]] - vals[ops[:, 1]]
            elif kind == CMP:
                r = (vals[ops[:, 0]] >= vals[ops[:, 1]]).astype(np.int64)
            elif kind == MUX:
                r = np.where(vals[ops[:, 0]] != 0, vals[ops[:, 1]], vals[ops[:, 2]])
            else:
                r = vals[ops[:, 0]]
            if self.check_widths:
                bad = (r < self.lo[ids][:, None]) | (r > self.hi[ids][:, None])
                if bad.any():
                    k, b = np.argwhere(bad)[0]
                    nid = int(ids[k])
                    raise WidthViolationError(nid, int(r[k, b]), int(self.width[nid]))
            vals[ids] = r

    def run(self, in_data, in_valid=None, rst=None):
        """Simulate ``C`` cycles.

        ``in_data``: ``(B, C, d_in)`` integer codes; ``in_valid``/``rst``:
        ``(B, C)`` flags (default valid everywhere, no reset). Returns
        ``(out_data (B, C, d_out), out_valid (B, C))`` sampled after each edge.
        """
        net = self.net
        x = np.asarray(in_data, dtype=np.int64)
        B, C, _ = x.shape
        valid = np.ones((B, C), dtype=np.int64) if in_valid is None else np.asarray(in_valid, dtype=np.int64)
        reset = np.zeros((B, C), dtype=bool) if rst is None else np.asarray(rst, dtype=bool)
        vals = np.zeros((self.n_nodes, B), dtype=np.int64)
        vals[self.const_ids] = self.const_vals[:, None]
        state = np.zeros((len(self.regs), B), dtype=np.int64)
        out_valid_reg = np.zeros(B, dtype=np.int64)
        outs = np.zeros((B, C, len(net.outputs)), dtype=np.int64)
        ovalid = np.zeros((B, C), dtype=bool)
        out_ids = np.asarray(net.outputs, dtype=np.int64)
        for c in range(C):
            vals[self.regs] = state
            if net.inputs:
                vals[np.asarray(net.inputs)] = x[:, c, :].T
            vals[net.valid] = valid[:, c]
            self._eval(vals, self.state_schedule)
            state = np.where(reset[:, c], 0, vals[self.reg_d])
            out_valid_reg = np.where(reset[:, c], 0, valid[:, c])
            # combinational readout of the updated registers
            vals[self.regs] = state
            self._eval(vals, self.output_schedule)
            outs[:, c, :] = vals[out_ids].T
            ovalid[:, c] = out_valid_reg.astype(bool)
        return outs, ovalid


def interpret_netlist(net: Netlist, u_int, check_widths: bool = True):
    """Integer outputs for integer input sequences, all samples valid.

    ``u_int`` is ``(L, d_in)`` or ``(B, L, d_in)``; every sequence starts from
    reset. Returns ``(L, d_out)`` or ``(B, L, d_out)``.
    """
    u = np.asarray(u_int, dtype=np.int64)
    squeeze = u.ndim == 2
    if squeeze:
        u = u[None]
    outs, _ = Interpreter(net, check_widths).run(u)
    return outs[0] if squeeze else outs
