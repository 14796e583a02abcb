"""Shared fixtures: a deterministic 40-node tree, a width-mismatch case,
and the matching single-insert edit script used across modules."""

from __future__ import annotations

import json

import pytest

from grove.cases import parse_case
from grove.tree import KnowledgeTree, ShapeGuardConfig

ROOT_TITLES = (
    "Interface Protocol Bugs",
    "Data Width And Capture",
    "Counter And State Errors",
    "Reset And Timing Issues",
)

STAR_STATEMENT = (
    "Read multiplexer assignments must use (address == 0) to route valid data, "
    "ensuring that data_out is zero-extended for non-zero addresses per specification."
)


def build_fixture_tree() -> KnowledgeTree:
    """3 levels, 40 nodes: 4 roots x 3 children x 2 grandchildren."""
    tree = KnowledgeTree(ShapeGuardConfig())
    for i, root_title in enumerate(ROOT_TITLES):
        root = tree.insert(
            title=root_title,
            knowledge_statement=f"Grouping node for {root_title.lower()}. Navigate down for fixes.",
            apply_conditions=f"Cases whose failure log points at {root_title.lower()}.",
        )
        for j in range(3):
            if i == 0 and j == 0:
                title = "Zero Extension In Read Mux"
                statement = STAR_STATEMENT
                conditions = (
                    "When constructing the read multiplexer, check the address condition "
                    "so that the produced data matches the specified zero-extension behavior."
                )
            else:
                title = f"{root_title.split()[0]} Group {j}"
                statement = (
                    f"Check pattern {i}-{j} before editing. Then apply the matching fix shape."
                )
                conditions = f"When the failing assertion mentions signal family {i}-{j}."
            child = tree.insert(
                root,
                title=title,
                knowledge_statement=statement,
                apply_conditions=conditions,
            )
            for k in range(2):
                tree.insert(
                    child,
                    title=f"{root_title.split()[0]} Rule {j}.{k}",
                    knowledge_statement=(
                        f"Concrete repair {i}-{j}-{k}: align the RTL with the declared contract."
                    ),
                    apply_conditions=f"Specific trigger {i}-{j}-{k} present in the case context.",
                )
    return tree


@pytest.fixture
def fixture_tree() -> KnowledgeTree:
    return build_fixture_tree()


DATAGEN_RTL = "\n".join(
    [
        "module dataGenerator (",
        "  input wire clock,",
        "  input wire nReset,",
        "  input wire [9:0] adc_databus,",
        "  input wire testModeFlag,",
        "  output wire [9:0] dataOut",
        ");",
        "  reg [8:0] adcData;",
        "  reg [9:0] testData;",
        "  assign dataOut = testModeFlag ? testData : adcData;",
        "  always @(posedge clock, negedge nReset) begin",
        "    if (!nReset)",
        "      adcData <= 0;",
        "    else",
        "      adcData <= adc_databus;",
        "  end",
        "endmodule",
    ]
)


def datagenerator_doc() -> dict:
    return {
        "case_id": "dataGenerator_001",
        "module_name": "dataGenerator",
        "spec_text": (
            "## 2. Module Interface\n### Inputs\n"
            "- **adc_databus** (10-bit): Input bus carrying data from an ADC."
        ),
        "buggy_rtl": DATAGEN_RTL,
        "assertions": [
            "@(posedge clock) disable iff(!nReset) !testModeFlag |=> (adcData == $past(adc_databus));"
        ],
        "failure_log": "Assertion failed at cycle 42: adcData == $past(adc_databus) is FALSE.",
        "golden_fix": {
            "buggy_lines": [{"line": 8, "text": "reg [8:0] adcData;"}],
            "fixed_lines": [{"line": 8, "text": "reg [9:0] adcData;"}],
        },
    }


@pytest.fixture
def datagenerator_case():
    return parse_case(json.dumps(datagenerator_doc()))


WIDTH_MISMATCH_TITLE = "DataGenerator Width Mismatch in ADC Data Capture"
WIDTH_MISMATCH_STATEMENT = (
    "Ensure that capture registers use the exact width specified for their "
    "input buses to prevent data capture assertion failures."
)
WIDTH_MISMATCH_CONDITIONS = (
    "Applicable when an ADC capture register is declared narrower than the "
    "specified bus width (e.g., reg [8:0] for a 10-bit bus). Look for width "
    "mismatches between RTL registers and spec/properties."
)


def width_mismatch_script_doc(parent_id: str) -> dict:
    return {
        "ops": [
            {
                "type": "insert_node",
                "parent_ref": {"id": parent_id},
                "node": {
                    "level": 2,
                    "title": WIDTH_MISMATCH_TITLE,
                    "knowledge_statement": WIDTH_MISMATCH_STATEMENT,
                    "apply_conditions": WIDTH_MISMATCH_CONDITIONS,
                },
            }
        ]
    }


def width_mismatch_script_json(parent_id: str) -> str:
    return json.dumps(width_mismatch_script_doc(parent_id))


def insert_op(
    *,
    parent_ref: dict | None = None,
    level: int = 1,
    title: str,
    statement: str,
    conditions: str,
) -> dict:
    op = {
        "type": "insert_node",
        "node": {
            "level": level,
            "title": title,
            "knowledge_statement": statement,
            "apply_conditions": conditions,
        },
    }
    if parent_ref is not None:
        op["parent_ref"] = parent_ref
    return op


def training_responses(case, ops: list[dict], *, n: int = 1, item_passes: bool = True,
                       extra: list[str] | None = None) -> list[str]:
    """Scripted responses for one process_case run with a single candidate:
    the edit script, n baseline fix samples, n with-item fix samples."""
    from grove.synth import failing_fix_response, passing_fix_response

    good = passing_fix_response(case)
    bad = failing_fix_response(case)
    responses = [json.dumps({"edit_script": {"ops": ops}})]
    responses += [good] * n
    responses += ([good] if item_passes else [bad]) * n
    return responses + (extra or [])
