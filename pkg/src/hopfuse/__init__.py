"""hopfuse: multi-hop graph feature fusion for transductive node classification.

The pipeline: distill an adjacency into per-hop "new neighbor" matrices,
fuse them with learned weights into a single propagation operator, blend a
2-hop local branch with the multi-hop branch, prune low-relevance distant
neighbors by learned contribution scores, and train the whole thing with a
joint objective.  A CLI (``hopfuse``) wires dataset conversion,
pre-computation, training, evaluation and sweep reproduction.
"""

from .sparse import (
    SparseMatrix,
    bool_spmm,
    csr_from_edges,
    spmm_dense,
    support_minus,
    support_union,
    sym_normalize,
)

__version__ = "0.1.0"

__all__ = [
    "SparseMatrix",
    "csr_from_edges",
    "bool_spmm",
    "support_union",
    "support_minus",
    "sym_normalize",
    "spmm_dense",
    "__version__",
]
