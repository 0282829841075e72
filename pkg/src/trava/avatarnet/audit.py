"""Structural linearity audit for the lighting pathway.

Numeric superposition tests can pass by luck at loose tolerances; this walker
instead proves the graph shape. Every recorded node between the light leaf
and the output must be a linear map in its light-dependent inputs: no bias
parameters, no activation or otherwise curved ops, no product of two
light-dependent terms, and no sum that mixes light-dependent terms with
constants (which would make the output affine rather than linear).
"""

from __future__ import annotations

from trava import diffcore as dc

# Single-input linear maps: always safe on the light path.
_PASS_THROUGH = {"reshape", "transpose", "slice", "gather_rows", "scale",
                 "reduce_sum", "reduce_mean", "sparse_matmul"}
# Products: linear iff exactly one operand carries the light.
_ONE_SIDED = {"mul", "matmul"}
# Sums/joins: linear iff every operand carries the light.
_JOIN = {"add", "sub", "concat"}
# Layers with an optional bias parent; the data input must carry the light.
_LAYERS = {"fc", "conv2d", "conv_transpose2d"}


def audit_light_path(output: dc.Tensor, light: dc.Tensor) -> int:
    """Verify the recorded graph from `light` to `output` is strictly linear.

    The graph must have been recorded with light.requires_grad set, otherwise
    no provenance exists to walk. Returns the number of light-dependent
    interior nodes on success; raises ValueError naming every violation.
    """
    if not isinstance(output, dc.Tensor) or not isinstance(light, dc.Tensor):
        raise TypeError("audit_light_path expects Tensors")
    if not output.parents:
        raise ValueError("output has no recorded graph; was tracing disabled "
                         "or requires_grad unset?")
    flags = dc.depends_on(output, light)
    if not flags.get(id(output), False):
        raise ValueError("output does not depend on the light input")

    violations = []
    count = 0
    for node in dc.topo_order(output):
        if node is light or not flags[id(node)]:
            continue
        count += 1
        dep = [flags[id(p)] for p in node.parents]
        op = node.op
        if op in _LAYERS:
            if node.meta.get("has_bias"):
                violations.append(f"{op} with a bias parameter on the light path")
            if len(dep) > 1 and dep[1]:
                violations.append(f"{op} weight depends on the light")
        elif op in _JOIN:
            if not all(dep):
                violations.append(f"{op} mixes light-dependent and constant terms")
        elif op in _ONE_SIDED:
            if sum(dep) != 1:
                violations.append(f"{op} of two light-dependent operands")
        elif op == "div":
            if dep[1]:
                violations.append("division by a light-dependent term")
        elif op not in _PASS_THROUGH:
            violations.append(f"non-linear op {op!r} on the light path")
    if violations:
        raise ValueError("light path is not linear: "
                         + "; ".join(sorted(set(violations))))
    return count
