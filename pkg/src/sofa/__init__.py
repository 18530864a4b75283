"""Dynamic sparse attention: log-domain prediction, segmented top-k,
sorted online softmax, reuse-aware KV scheduling, cost model and DSE."""

__version__ = "0.1.0"
