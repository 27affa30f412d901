"""Assembly-assistance step recognition and multi-agent coordination benchmark.

The library has three layers:

* recognition: depth-refined object context (`perception`), the two step
  detectors (`experts`), and their adaptive fusion with online feedback
  updates (`asf`);
* answering: knowledge base and lexical retrieval (`kb`), role agents with
  routing, backends and safety auditing (`agents`), and the five
  coordination topologies (`topologies`);
* evaluation: the metric suite (`metrics`) and the benchmark CLI/harness
  (`harness`, `cli`).

Numeric hot paths run on a compiled extension when available; see
`asfbench._kernels.backend()`.
"""

__version__ = "0.1.0"
