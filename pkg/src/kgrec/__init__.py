"""Knowledge-graph + semantic fusion ad recommendation pipeline.

Submodules: :mod:`kgrec.kg` (graph core), :mod:`kgrec.transe` (KG
embeddings), :mod:`kgrec.encoder` (text attention encoder),
:mod:`kgrec.fusion` (fusion + graph attention reference), :mod:`kgrec.model`
(joint model with hand-written gradients), :mod:`kgrec.training` (optimizer
loop), :mod:`kgrec.index` (exact / HNSW / IVF retrieval), :mod:`kgrec.metrics`
(ranking metrics and evaluation), :mod:`kgrec.datagen` (synthetic bundles),
and :mod:`kgrec.cli`.
"""

__version__ = "0.1.0"
