"""
agents/
-------
Algorithmic cores of the QA pipeline: BM25 index, essential-term tagger,
question model, entailment scorers, decision rules and report rendering.
"""
