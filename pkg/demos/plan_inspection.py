"""
Inspect a sub-question plan and its execution waves
====================================================

A comparison question is split into a disambiguation step, two independent
branches and a final comparison. The schedule groups sub-questions that can
run in parallel into waves.
"""

from pathlib import Path

import kgpath
from kgpath.llm import LLMGateway, MockProvider
from kgpath.planner import dag_from_plan, plan, rephrase_with_context, topo_schedule

FIXTURES = Path(kgpath.__file__).parent / "fixtures"
QUESTION = "Which came first: the company founded by Alice Marlow or the Riverside Festival?"

llm = LLMGateway(MockProvider.from_plan_files(FIXTURES / "plans.jsonl"), backoff=0.0)
dag = plan(QUESTION, llm)

for nid, node in dag.nodes.items():
    deps = ", ".join(sorted(node.depends_on)) or "-"
    print(f"{nid:5} [{node.kind.value:14}] after {deps:10} {node.text}")

schedule = topo_schedule(dag)
for i, wave in enumerate(schedule.waves):
    print(f"wave {i}: {' '.join(wave)}")

###############################################################################
# Later sub-questions refer to earlier answers as ``[A<seq>.<step>]``. Once
# those answers exist they are substituted into the text.

final_node = dag.nodes[dag.final_node]
print(final_node.text)
print(rephrase_with_context(final_node, {"S1.2": "2003", "S2.1": "Bruno Kessler, 1998"}).text)

###############################################################################
# A plan with a cycle is repaired by dropping the edge that closes it.

cyclic = {
    "nodes": [{"id": "S1.1", "text": "Who founded Acme?"},
              {"id": "S1.2", "text": "Where was [A1.1] born?"}],
    "edges": [["S1.1", "S1.2"], ["S1.2", "S1.1"]],
    "final": "S1.2",
}
repaired = dag_from_plan("Where was the founder of Acme born?", cyclic)
print("edges:", repaired.edges)
print("repairs:", repaired.repairs)
