from .cost import CostEstimate, estimate_cost
from .csd import binary_weight, csd_digits, csd_value
from .interp import Interpreter, interpret_netlist
from .netlist import Netlist, Node, lower
from .verilog import check_verilog, emit_verilog

__all__ = [
    "CostEstimate", "estimate_cost", "binary_weight", "csd_digits", "csd_value", "Interpreter", "interpret_netlist",
    "Netlist", "Node", "lower", "check_verilog", "emit_verilog",
]
