"""Seq2seq by multiset tagging and relaxed permutations.

Stage one tags every input token with a multiset of output tokens, stage two
orders the tagged tokens by solving an entropy-regularized linear program with
cyclic KL projections and rounding the result with the Hungarian algorithm.
"""

__version__ = "0.1.0"
