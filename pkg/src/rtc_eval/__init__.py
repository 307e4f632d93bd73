"""Round-trip correctness evaluation harness for code generation models.

A model describes code in natural language, regenerates the code from its
own description, and the harness scores how much of the original semantics
survived the round trip - with unit-test oracles where a project's suite
is available, and text metrics otherwise. Evaluation corpora are built
automatically from any tested source project.
"""

__version__ = "0.1.0"
