"""Structural cost estimate of a netlist.

est_luts is a fixed linear model used for relative ordering only: each adder or
subtractor costs its widest operand, each comparator the wider of its two
operands.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

from .netlist import ADD, CMP, LOGIC_KINDS, REG, SHL, SUB, Netlist


@dataclass(frozen=True)
class CostEstimate:
    n_adders: int = 0
    n_comparators: int = 0
    n_registers: int = 0
    n_shift_terms: int = 0
    est_luts: int = 0
    critical_path_levels: int = 0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: int(d[k]) for k in cls.__dataclass_fields__})


def critical_path(net: Netlist) -> int:
    """Longest chain of add/sub/cmp/mux nodes between sequential boundaries."""
    depth = [0] * len(net.nodes)
    for n in net.nodes:
        if n.operands and n.kind != REG:
            depth[n.id] = max(depth[o] for o in n.operands) + (n.kind in LOGIC_KINDS)
    return max(depth, default=0)


def estimate_cost(net: Netlist) -> CostEstimate:
    n_add = n_cmp = n_reg = n_shl = luts = 0
    for n in net.nodes:
        widths = [net.nodes[o].width for o in n.operands]
        if n.kind in (ADD, SUB):
            n_add += 1
            luts += max(widths)
        elif n.kind == CMP:
            n_cmp += 1
            luts += max(widths)
        elif n.kind == REG:
            n_reg += 1
        elif n.kind == SHL:
            n_shl += 1
    return CostEstimate(n_add, n_cmp, n_reg, n_shl, luts, critical_path(net))
