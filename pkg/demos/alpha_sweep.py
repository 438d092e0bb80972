"""
Sweep the reranking weights
===========================

Combined score is ``alpha * R + beta * M`` with ``beta = 1 - alpha``, where
``R`` is the retrieval score and ``M`` the similarity to already-resolved
answers. This sweeps alpha over a grid and prints context recall, then plots
it if matplotlib is available.
"""

from pathlib import Path

import numpy as np

import kgpath
from kgpath.config import RunConfig, make_gateway
from kgpath.evaluation import load_suite, sweep, sweep_csv
from kgpath.ingest import load_corpus
from kgpath.pipeline import Engine, build_index

FIXTURES = Path(kgpath.__file__).parent / "fixtures"

cfg = RunConfig(plans=[str(FIXTURES / "plans.jsonl")])
llm = make_gateway(cfg)
engine = Engine(build_index(load_corpus(FIXTURES / "corpus"), llm, cfg), llm, cfg)
rows = sweep(engine, load_suite(FIXTURES / "suite.jsonl"), step=0.05)
print(sweep_csv(rows))

alpha = np.array([r["alpha"] for r in rows])
recall = np.array([r["recall"] for r in rows])
best = alpha[recall == recall.max()]
print(f"best recall {recall.max():.2f} for alpha in [{best.min():.2f}, {best.max():.2f}]")

###############################################################################
# At ``alpha = 1`` the similarity term vanishes and the result equals the
# ``no_rerank`` ablation.

try:
    import matplotlib.pyplot as plt
except ImportError:
    plt = None
if plt is not None:
    plt.plot(alpha, recall, marker="o")
    plt.xlabel("alpha")
    plt.ylabel("context recall")
    plt.savefig("alpha_sweep.png")
    print("wrote alpha_sweep.png")
