"""reftrack: language-conditioned multi-object tracking at desk scale.

Subpackages/modules:

- ``domain``     shared geometry and data model
- ``synthworld`` deterministic synthetic video generator
- ``pipeline``   item propagation, template expressions, paraphrase expansion
- ``model``      fusion frontend, query decoder, temporal memory modules
- ``objective``  assignment, losses, clip supervision, training loop
- ``metrics``    referent-aware HOTA evaluator
- ``harness``    configs, checkpoints, file formats, CLI
"""

__version__ = "0.1.0"
