"""Verilog-2001 emission for netlists, and a checker for the emitted subset.

Every combinational node becomes one unsigned ``wire``. Operands are resized
explicitly (sign extension for signed nodes, zero extension for comparator
bits) so every ``+``/``-`` works on equal-width operands; comparisons go
through ``$signed``.
"""

from __future__ import annotations

import re

from ..errors import NetlistError, VerilogCheckError
from .netlist import ADD, CMP, CONST, INPUT, MUX, OUTPUT, REG, SHL, SUB, Netlist

KEYWORDS = {
    "module", "endmodule", "input", "output", "wire", "reg", "assign", "always", "posedge",
    "negedge", "begin", "end", "if", "else", "signed", "integer", "parameter", "localparam",
    "case", "endcase", "default", "for", "function", "task", "initial",
}
IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
RESERVED_PORTS = ("clk", "rst", "in_valid", "in_data", "out_valid", "out_data")


def _hex(value: int, width: int) -> str:
    return f"{width}'h{value & ((1 << width) - 1):0{(width + 3) // 4}X}"


def _sig(net: Netlist, i: int) -> str:
    n = net.nodes[i]
    if n.kind == CONST:
        return _hex(n.value, n.width)
    if n.kind == REG:
        return n.name
    if n.kind == INPUT:
        return n.name
    return f"n{i}"


def _resize(net: Netlist, i: int, width: int) -> str:
    n = net.nodes[i]
    if n.kind == CONST:
        return _hex(n.value, width)
    s = _sig(net, i)
    if width == n.width:
        return s
    if width < n.width:
        return f"{s}[{width - 1}:0]" if width > 1 else f"{s}[0]"
    fill = f"{s}[{n.width - 1}]" if n.signed else "1'b0"
    return f"{{{{{width - n.width}{{{fill}}}}}, {s}}}"


def _vec(width: int) -> str:
    return f"[{width - 1}:0] " if width > 1 else ""


def emit_verilog(net: Netlist, module_name: str = "rc_accel") -> str:
    if not IDENT.match(module_name) or module_name in KEYWORDS or module_name in RESERVED_PORTS:
        raise NetlistError(f"invalid module name {module_name!r}")
    idents = [net.nodes[i].name for i in list(net.inputs) + list(net.regs)]
    taken = set(RESERVED_PORTS) | {module_name}
    for nm in idents:
        if not IDENT.match(nm) or nm in KEYWORDS or nm in taken or re.fullmatch(r"n\d+", nm):
            raise NetlistError(f"identifier collision or invalid name {nm!r}")
        taken.add(nm)

    in_w = net.nodes[net.inputs[0]].width if net.inputs else 1
    out_w = max((net.nodes[o].width for o in net.outputs), default=1)
    d_in, d_out = len(net.inputs), len(net.outputs)
    meta = net.meta
    L = []
    L.append(f"// q={meta.get('q')} n={meta.get('n')} d_in={d_in} d_out={d_out} "
             f"weights={meta.get('n_weights')} prune_rate={meta.get('prune_rate')}")
    L.append(f"module {module_name} (")
    L.append("    input wire clk,")
    L.append("    input wire rst,")
    L.append("    input wire in_valid,")
    L.append(f"    input wire [{max(d_in, 1) * in_w - 1}:0] in_data,")
    L.append("    output reg out_valid,")
    L.append(f"    output wire [{max(d_out, 1) * out_w - 1}:0] out_data")
    L.append(");")
    L.append("")
    for j, i in enumerate(net.inputs):
        L.append(f"    wire {_vec(in_w)}{net.nodes[i].name};")
    for i in net.regs:
        L.append(f"    reg {_vec(net.nodes[i].width)}{net.nodes[i].name};")
    for n in net.nodes:
        if n.kind in (SHL, ADD, SUB, CMP, MUX, OUTPUT):
            L.append(f"    wire {_vec(n.width)}n{n.id};")
    L.append("")
    for j, i in enumerate(net.inputs):
        hi, lo = (j + 1) * in_w - 1, j * in_w
        sel = f"in_data[{hi}:{lo}]" if in_w > 1 else f"in_data[{lo}]"
        L.append(f"    assign {net.nodes[i].name} = {sel};")
    for n in net.nodes:
        if n.kind == SHL:
            src = net.nodes[n.operands[0]]
            expr = f"{{{_sig(net, src.id)}, {n.value}'b{'0' * n.value}}}"
            if src.width + n.value != n.width:
                raise NetlistError(f"shift node {n.id} width mismatch")
            L.append(f"    assign n{n.id} = {expr};")
        elif n.kind in (ADD, SUB):
            op = "+" if n.kind == ADD else "-"
            a, b = n.operands
            L.append(f"    assign n{n.id} = {_resize(net, a, n.width)} {op} {_resize(net, b, n.width)};")
        elif n.kind == CMP:
            a, b = n.operands
            w = max(net.nodes[a].width, net.nodes[b].width)
            L.append(f"    assign n{n.id} = $signed({_resize(net, a, w)}) >= $signed({_resize(net, b, w)});")
        elif n.kind == MUX:
            sel, a, b = n.operands
            L.append(f"    assign n{n.id} = {_sig(net, sel)} ? {_resize(net, a, n.width)} : {_resize(net, b, n.width)};")
        elif n.kind == OUTPUT:
            L.append(f"    assign n{n.id} = {_sig(net, n.operands[0])};")
    for k, i in enumerate(net.outputs):
        hi, lo = (k + 1) * out_w - 1, k * out_w
        sel = f"out_data[{hi}:{lo}]" if out_w > 1 else f"out_data[{lo}]"
        L.append(f"    assign {sel} = {_resize(net, i, out_w)};")
    if not net.outputs:
        L.append("    assign out_data = 1'b0;")
    L.append("")
    L.append("    always @(posedge clk) begin")
    L.append("        if (rst) begin")
    for i in net.regs:
        L.append(f"            {net.nodes[i].name} <= {_hex(0, net.nodes[i].width)};")
    L.append("            out_valid <= 1'b0;")
    L.append("        end else begin")
    for i in net.regs:
        L.append(f"            {net.nodes[i].name} <= {_resize(net, net.next_state[i], net.nodes[i].width)};")
    L.append("            out_valid <= in_valid;")
    L.append("        end")
    L.append("    end")
    L.append("")
    L.append("endmodule")
    return "\n".join(L) + "\n"


# -- subset checker ------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(//[^\n]*)|(\d+'[hbd][0-9A-Fa-f_]+)|(\$signed)|([A-Za-z_][A-Za-z0-9_]*)|(\d+)|(<=|>=|==|[()\[\]{},;:?+\-@=]))"
)


def _tokenize(text):
    toks = []
    pos = 0
    line = 1
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            rest = text[pos:].lstrip()
            if not rest:
                break
            raise VerilogCheckError(f"line {line}: unexpected character {rest[0]!r}")
        line += text.count("\n", pos, m.end())
        pos = m.end()
        if m.group(1):
            continue
        for kind, g in zip(("lit", "sys", "id", "num", "op"), m.groups()[1:]):
            if g is not None:
                toks.append((kind, g, line))
                break
    return toks


class _Parser:
    def __init__(self, text):
        self.toks = _tokenize(text)
        self.k = 0
        self.decl = {}  # name -> (kind, width)
        self.driven = set()

    def peek(self, off=0):
        i = self.k + off
        return self.toks[i] if i < len(self.toks) else ("eof", "", -1)

    def take(self, value=None, kind=None):
        t = self.peek()
        if (value is not None and t[1] != value) or (kind is not None and t[0] != kind):
            raise VerilogCheckError(f"line {t[2]}: expected {value or kind}, got {t[1]!r}")
        self.k += 1
        return t

    def range_(self):
        if self.peek()[1] != "[":
            return 1
        self.take("[")
        hi = int(self.take(kind="num")[1])
        self.take(":")
        lo = int(self.take(kind="num")[1])
        self.take("]")
        if lo != 0 or hi < 0:
            raise VerilogCheckError(f"line {self.peek()[2]}: ranges must be [msb:0]")
        return hi + 1

    def declare(self, kind, width, name, line):
        if name in KEYWORDS:
            raise VerilogCheckError(f"line {line}: keyword {name!r} used as identifier")
        if name in self.decl:
            raise VerilogCheckError(f"line {line}: {name!r} declared twice")
        self.decl[name] = (kind, width)

    def module(self):
        self.take("module")
        name = self.take(kind="id")
        self.take("(")
        while True:
            direction = self.take(kind="id")[1]
            if direction not in ("input", "output"):
                raise VerilogCheckError(f"line {name[2]}: port direction expected")
            kind = self.take(kind="id")[1]
            if kind not in ("wire", "reg"):
                raise VerilogCheckError("port type must be wire or reg")
            w = self.range_()
            t = self.take(kind="id")
            self.declare(f"{direction}_{kind}", w, t[1], t[2])
            if self.peek()[1] == ",":
                self.take(",")
                continue
            break
        self.take(")")
        self.take(";")
        while self.peek()[1] != "endmodule":
            t = self.peek()
            if t[1] in ("wire", "reg"):
                self.take()
                w = self.range_()
                n = self.take(kind="id")
                self.declare(t[1], w, n[1], n[2])
                self.take(";")
            elif t[1] == "assign":
                self.assign()
            elif t[1] == "always":
                self.always()
            else:
                raise VerilogCheckError(f"line {t[2]}: unexpected {t[1]!r}")
        self.take("endmodule")
        if self.peek()[0] != "eof":
            raise VerilogCheckError("text after endmodule")
        for nm, (kind, _) in self.decl.items():
            if kind in ("wire", "output_wire") and nm not in self.driven:
                raise VerilogCheckError(f"wire {nm!r} is never driven")
        return name[1]

    def lvalue(self):
        t = self.take(kind="id")
        if t[1] not in self.decl:
            raise VerilogCheckError(f"line {t[2]}: undeclared {t[1]!r}")
        kind, w = self.decl[t[1]]
        if self.peek()[1] == "[":
            hi, lo = self.select(w, t)
            key = (t[1], hi, lo)
            width = hi - lo + 1
        else:
            key = t[1]
            width = w
        return t, kind, key, width

    def select(self, w, t):
        self.take("[")
        hi = int(self.take(kind="num")[1])
        lo = hi
        if self.peek()[1] == ":":
            self.take(":")
            lo = int(self.take(kind="num")[1])
        self.take("]")
        if not 0 <= lo <= hi < w:
            raise VerilogCheckError(f"line {t[2]}: select [{hi}:{lo}] outside {t[1]!r}")
        return hi, lo

    def assign(self):
        self.take("assign")
        t, kind, key, width = self.lvalue()
        if kind not in ("wire", "output_wire"):
            raise VerilogCheckError(f"line {t[2]}: assign to non-wire {t[1]!r}")
        if key in self.driven or t[1] in self.driven:
            raise VerilogCheckError(f"line {t[2]}: {t[1]!r} driven twice")
        self.driven.add(key)
        if isinstance(key, tuple):
            self.driven_part(t[1], key)
        else:
            self.driven.add(t[1])
        self.take("=")
        w = self.expr()
        if w != width:
            raise VerilogCheckError(f"line {t[2]}: width {w} assigned to {width}-bit {t[1]!r}")
        self.take(";")

    def driven_part(self, name, key):
        # a fully covered vector counts as driven
        parts = [k for k in self.driven if isinstance(k, tuple) and k[0] == name]
        bits = set()
        for _, hi, lo in parts:
            new = set(range(lo, hi + 1))
            if bits & new:
                raise VerilogCheckError(f"overlapping drivers on {name!r}")
            bits |= new
        if bits == set(range(self.decl[name][1])):
            self.driven.add(name)

    def always(self):
        self.take("always")
        self.take("@")
        self.take("(")
        self.take("posedge")
        if self.take(kind="id")[1] != "clk":
            raise VerilogCheckError("single clock domain 'clk' required")
        self.take(")")
        self.take("begin")
        self.take("if")
        self.take("(")
        if self.take(kind="id")[1] != "rst":
            raise VerilogCheckError("synchronous reset on 'rst' required")
        self.take(")")
        reset = self.block()
        self.take("else")
        run = self.block()
        self.take("end")
        if reset != run:
            raise VerilogCheckError("reset and run branches must assign the same registers")

    def block(self):
        self.take("begin")
        assigned = set()
        while self.peek()[1] != "end":
            t, kind, key, width = self.lvalue()
            if kind not in ("reg", "output_reg"):
                raise VerilogCheckError(f"line {t[2]}: nonblocking assign to non-reg {t[1]!r}")
            if key in assigned:
                raise VerilogCheckError(f"line {t[2]}: {t[1]!r} assigned twice")
            assigned.add(key)
            self.take("<=")
            w = self.expr()
            if w != width:
                raise VerilogCheckError(f"line {t[2]}: width {w} assigned to {width}-bit {t[1]!r}")
            self.take(";")
        self.take("end")
        return assigned

    # expressions: ternary > comparison > additive > primary
    def expr(self):
        w = self.compare()
        if self.peek()[1] == "?":
            t = self.take("?")
            if w != 1:
                raise VerilogCheckError(f"line {t[2]}: ternary select must be 1 bit")
            a = self.expr()
            self.take(":")
            b = self.expr()
            if a != b:
                raise VerilogCheckError(f"line {t[2]}: ternary branches differ in width ({a} vs {b})")
            return a
        return w

    def compare(self):
        w = self.additive()
        if self.peek()[1] == ">=":
            t = self.take(">=")
            v = self.additive()
            if v != w:
                raise VerilogCheckError(f"line {t[2]}: comparison of {w}- and {v}-bit operands")
            return 1
        return w

    def additive(self):
        w = self.primary()
        while self.peek()[1] in ("+", "-"):
            t = self.take()
            v = self.primary()
            if v != w:
                raise VerilogCheckError(f"line {t[2]}: {t[1]} on {w}- and {v}-bit operands")
        return w

    def primary(self):
        t = self.peek()
        if t[0] == "lit":
            self.take()
            width, rest = t[1].split("'")
            width = int(width)
            base = {"h": 16, "b": 2, "d": 10}[rest[0]]
            if int(rest[1:].replace("_", ""), base) >= (1 << width):
                raise VerilogCheckError(f"line {t[2]}: literal {t[1]} overflows its width")
            return width
        if t[0] == "sys":
            self.take()
            self.take("(")
            w = self.expr()
            self.take(")")
            return w
        if t[1] == "(":
            self.take("(")
            w = self.expr()
            self.take(")")
            return w
        if t[1] == "{":
            self.take("{")
            if self.peek()[0] == "num":
                n = int(self.take()[1])
                self.take("{")
                w = self.expr()
                self.take("}")
                self.take("}")
                return n * w
            total = self.expr()
            while self.peek()[1] == ",":
                self.take(",")
                total += self.expr()
            self.take("}")
            return total
        if t[0] == "id":
            self.take()
            if t[1] not in self.decl:
                raise VerilogCheckError(f"line {t[2]}: undeclared {t[1]!r}")
            _, w = self.decl[t[1]]
            if self.peek()[1] == "[":
                hi, lo = self.select(w, t)
                return hi - lo + 1
            return w
        raise VerilogCheckError(f"line {t[2]}: unexpected {t[1]!r} in expression")


def check_verilog(text: str) -> str:
    """Accept or reject text against the emitted Verilog subset; returns the module name.

    Checks declarations (unique, declared before use), single drivers,
    full-width driving of every wire, exact operand widths for arithmetic,
    comparisons, ternaries and assignments, and a single-clock always block
    with synchronous reset.
    """
    return _Parser(text).module()
