"""advsim: black-box greedy adversarial attacks on binary function
similarity, with semantics-checked CFG transformations and a full
function-search evaluation harness."""

__version__ = "0.1.0"
