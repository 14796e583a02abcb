"""Deterministic synthetic fixture cases.

Stands in for a real assertion-failure corpus: each case is a register
width-mismatch bug in a small capture module, with a golden one-line fix.
Content is seeded and reproducible so tests and demos are hermetic.
"""

from __future__ import annotations

import random

from .cases import DebugCase, GoldenFix

_BLOCKS = ("adc", "dac", "spi", "uart", "fifo", "dma", "axi", "apb")


def make_synthetic_case(index: int, seed: int = 0) -> DebugCase:
    rng = random.Random((seed << 16) ^ index)
    block = _BLOCKS[index % len(_BLOCKS)]
    width = rng.randint(8, 24)
    module = f"{block}_capture_{index:03d}"
    bus = f"{block}_databus"
    buggy_decl = f"reg [{width - 2}:0] capture_q;"
    fixed_decl = f"reg [{width - 1}:0] capture_q;"
    rtl = "\n".join(
        [
            f"module {module} (",
            "  input wire clock,",
            "  input wire n_reset,",
            f"  input wire [{width - 1}:0] {bus},",
            "  input wire capture_en,",
            f"  output wire [{width - 1}:0] data_out",
            ");",
            f"  {buggy_decl}",
            "  always @(posedge clock or negedge n_reset) begin",
            "    if (!n_reset)",
            "      capture_q <= 0;",
            "    else if (capture_en)",
            f"      capture_q <= {bus};",
            "  end",
            "  assign data_out = capture_q;",
            "endmodule",
        ]
    )
    assertion = (
        f"@(posedge clock) disable iff(!n_reset) "
        f"capture_en |=> (capture_q == $past({bus}));"
    )
    return DebugCase(
        case_id=f"case_{index:03d}",
        module_name=module,
        spec_text=(
            f"## {module}\n### Inputs\n"
            f"- **{bus}** ({width}-bit): input bus carrying sampled data.\n"
            f"The capture register must hold the full {width}-bit value."
        ),
        buggy_rtl=rtl,
        assertions=(assertion,),
        failure_log=(
            f"Assertion failed at cycle {rng.randint(12, 900)}: "
            f"capture_q == $past({bus}) is FALSE (top bit truncated)."
        ),
        golden_fix=GoldenFix(
            buggy_lines=((8, buggy_decl),),
            fixed_lines=((8, fixed_decl),),
        ),
    )


def make_corpus(count: int, seed: int = 0) -> list[DebugCase]:
    return [make_synthetic_case(i, seed) for i in range(count)]


def passing_fix_response(case: DebugCase) -> str:
    """A model answer whose fenced block applies the golden fix."""
    fix = case.golden_fix
    if fix is None:
        raise ValueError("case has no golden fix")
    lines = case.buggy_rtl.split("\n")
    patched = dict(fix.fixed_lines)
    body = "\n".join(patched.get(i + 1, line) for i, line in enumerate(lines))
    return "The capture register is narrower than the bus.\n\n```verilog\n" + body + "\n```\n"


def failing_fix_response(case: DebugCase) -> str:
    """A model answer whose fenced block leaves the bug in place."""
    return "No change needed.\n\n```verilog\n" + case.buggy_rtl + "\n```\n"
