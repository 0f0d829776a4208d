"""Direct-logic netlist for a quantized reservoir.

Every surviving weight is a hardwired constant realized as shifts and
add/subtract nodes; each neuron's activation is a bank of comparators against
its threshold table; one register per neuron holds the state.

Signal timing: when ``in_valid`` is high on a clock edge the state registers
load the next state; ``out_valid`` follows ``in_valid`` by one cycle and
``out_data`` is the integer readout of the registered state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import NetlistError
from ..quant import QuantizedModel, signed_bits
from .csd import csd_digits

SCHEMA_VERSION = 1

INPUT = "input"
CONST = "const"
REG = "reg"
SHL = "shl"
ADD = "add"
SUB = "sub"
CMP = "cmp"
MUX = "mux"
OUTPUT = "output"

SOURCE_KINDS = (INPUT, CONST, REG)
COMB_KINDS = (SHL, ADD, SUB, CMP, MUX, OUTPUT)
LOGIC_KINDS = (ADD, SUB, CMP, MUX)


@dataclass
class Node:
    id: int
    kind: str
    width: int
    operands: tuple = ()
    value: int = 0  # const value, shift amount, or comparator threshold
    lo: int = 0
    hi: int = 0
    signed: bool = True
    name: str = ""

    def to_dict(self):
        return {
            "id": self.id, "kind": self.kind, "width": self.width, "operands": list(self.operands),
            "value": self.value, "lo": self.lo, "hi": self.hi, "signed": self.signed, "name": self.name,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["id"]), d["kind"], int(d["width"]), tuple(d["operands"]), int(d["value"]),
                   int(d["lo"]), int(d["hi"]), bool(d["signed"]), d.get("name", ""))


@dataclass
class Netlist:
    nodes: list = field(default_factory=list)
    inputs: list = field(default_factory=list)  # data input node ids, port order
    valid: Optional[int] = None  # in_valid node id
    regs: list = field(default_factory=list)  # state register ids
    next_state: dict = field(default_factory=dict)  # reg id -> D node id
    outputs: list = field(default_factory=list)  # output node ids, port order
    meta: dict = field(default_factory=dict)

    def kinds(self, kind):
        return [n for n in self.nodes if n.kind == kind]

    def add(self, kind, width, operands=(), value=0, lo=0, hi=0, signed=True, name=""):
        node = Node(len(self.nodes), kind, int(width), tuple(operands), int(value), int(lo), int(hi), signed, name)
        self.nodes.append(node)
        return node

    def levels(self):
        lv = [0] * len(self.nodes)
        for n in self.nodes:
            if n.kind in COMB_KINDS:
                lv[n.id] = 1 + max((lv[o] for o in n.operands), default=0)
        return lv

    def check(self):
        """Structural checks: operand order, register-only cycles, widths cover ranges."""
        for n in self.nodes:
            for o in n.operands:
                if not 0 <= o < n.id:
                    raise NetlistError(f"node {n.id} uses operand {o} out of topological order")
            if n.kind in COMB_KINDS and not n.operands:
                raise NetlistError(f"node {n.id} ({n.kind}) has no operands")
            if n.signed and (n.lo < -(1 << (n.width - 1)) or n.hi > (1 << (n.width - 1)) - 1):
                raise NetlistError(f"node {n.id} width {n.width} cannot hold [{n.lo}, {n.hi}]")
            if not n.signed and (n.lo < 0 or n.hi > (1 << n.width) - 1):
                raise NetlistError(f"node {n.id} width {n.width} cannot hold [{n.lo}, {n.hi}]")
        for r, d in self.next_state.items():
            if self.nodes[r].kind != REG:
                raise NetlistError(f"next-state target {r} is not a register")
            if self.nodes[d].width > self.nodes[r].width and not (
                self.nodes[d].lo >= self.nodes[r].lo and self.nodes[d].hi <= self.nodes[r].hi
            ):
                raise NetlistError(f"register {r} cannot hold its next state")

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "netlist",
            "nodes": [n.to_dict() for n in self.nodes],
            "inputs": self.inputs,
            "valid": self.valid,
            "regs": self.regs,
            "next_state": [[r, d] for r, d in sorted(self.next_state.items())],
            "outputs": self.outputs,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported netlist schema {d.get('schema_version')!r}")
        return cls(
            nodes=[Node.from_dict(n) for n in d["nodes"]],
            inputs=list(d["inputs"]),
            valid=d["valid"],
            regs=list(d["regs"]),
            next_state={int(r): int(v) for r, v in d["next_state"]},
            outputs=list(d["outputs"]),
            meta=d.get("meta", {}),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


class _Builder:
    def __init__(self):
        self.net = Netlist()
        self.consts = {}
        self.shifts = {}

    def const(self, v):
        v = int(v)
        if v not in self.consts:
            self.consts[v] = self.net.add(CONST, signed_bits(v, v), value=v, lo=v, hi=v).id
        return self.consts[v]

    def node(self, i):
        return self.net.nodes[i]

    def shl(self, src, k):
        if k == 0:
            return src
        key = (src, k)
        if key not in self.shifts:
            s = self.node(src)
            lo, hi = s.lo << k, s.hi << k
            self.shifts[key] = self.net.add(SHL, signed_bits(lo, hi), (src,), k, lo, hi).id
        return self.shifts[key]

    def arith(self, kind, a, b):
        na, nb = self.node(a), self.node(b)
        if kind == ADD:
            lo, hi = na.lo + nb.lo, na.hi + nb.hi
        else:
            lo, hi = na.lo - nb.hi, na.hi - nb.lo
        w = max(signed_bits(lo, hi), na.width + (not na.signed), nb.width + (not nb.signed))
        return self.net.add(kind, w, (a, b), lo=lo, hi=hi).id

    def tree(self, terms):
        """Balanced reduction of signed terms ``[(node, +1|-1), ...]``; None if empty."""
        if not terms:
            return None
        level = list(terms)
        while len(level) > 1:
            nxt = []
            for k in range(0, len(level) - 1, 2):
                (a, sa), (b, sb) = level[k], level[k + 1]
                if sa == sb:
                    nxt.append((self.arith(ADD, a, b), sa))
                elif sa > 0:
                    nxt.append((self.arith(SUB, a, b), 1))
                else:
                    nxt.append((self.arith(SUB, b, a), 1))
            if len(level) % 2:
                nxt.append(level[-1])
            level = nxt
        node, sign = level[0]
        if sign < 0:
            node = self.arith(SUB, self.const(0), node)
        return node

    def product_terms(self, weight, src):
        return [(self.shl(src, k), sign) for k, sign in csd_digits(int(weight))]


def lower(qm: QuantizedModel) -> Netlist:
    """Lower a (pruned) quantized model to a netlist."""
    if not np.any(qm.w_r_int) and not np.any(qm.w_in_int):
        raise NetlistError("degenerate model: no recurrent and no input weights")
    b = _Builder()
    net = b.net
    in_bits = qm.input_params.bits
    in_lo, in_hi = -(1 << (in_bits - 1)), (1 << (in_bits - 1)) - 1
    net.valid = net.add(INPUT, 1, lo=0, hi=1, signed=False, name="in_valid").id
    net.inputs = [net.add(INPUT, in_bits, lo=in_lo, hi=in_hi, name=f"u_{j}").id for j in range(qm.d_in)]
    codes = qm.thresholds.codes
    c_lo, c_hi = int(codes[0]), int(codes[-1])
    net.regs = [net.add(REG, qm.q, lo=c_lo, hi=c_hi, name=f"s_{i}").id for i in range(qm.n)]

    surviving = {(int(i), int(j)) for i, j in qm.positions}
    for i in range(qm.n):
        terms = []
        for j in range(qm.d_in):
            terms += b.product_terms(qm.w_in_int[i, j], net.inputs[j])
        for j in range(qm.n):
            if (i, j) in surviving:
                terms += b.product_terms(qm.w_r_int[i, j], net.regs[j])
        acc = b.tree(terms)
        if acc is None:
            acc = b.const(0)
        acc_node = b.node(acc)
        n_true = 0
        bits = []
        for t in qm.thresholds.thresholds:
            thr = int(t) - int(qm.bias_int[i])
            if acc_node.lo >= thr:
                n_true += 1
            elif acc_node.hi >= thr:
                bits.append((net.add(CMP, 1, (acc, b.const(thr)), thr, 0, 1, signed=False).id, 1))
        code = b.tree(bits)
        offset = c_lo + n_true
        if code is None:
            code = b.const(offset)
        elif offset != 0:
            code = b.arith(ADD, code, b.const(offset))
        cn = b.node(code)
        d = net.add(MUX, qm.q, (net.valid, code, net.regs[i]), lo=min(cn.lo, c_lo), hi=max(cn.hi, c_hi))
        net.next_state[net.regs[i]] = d.id

    for o in range(qm.d_out):
        terms = []
        for i in range(qm.n):
            terms += b.product_terms(qm.w_out_int[o, i], net.regs[i])
        y = b.tree(terms)
        if y is None:
            y = b.const(0)
        yn = b.node(y)
        net.outputs.append(net.add(OUTPUT, yn.width, (y,), lo=yn.lo, hi=yn.hi, name=f"y_{o}").id)

    net.meta = {
        "q": qm.q,
        "n": qm.n,
        "d_in": qm.d_in,
        "d_out": qm.d_out,
        "input_bits": in_bits,
        "n_weights": int(len(qm.positions)),
        "prune_rate": qm.prune_rate,
    }
    net.check()
    return net
