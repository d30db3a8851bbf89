"""Exact computation in almost-automorphism groups of quasi-regular rooted trees.

The package works with the rooted tree whose root has degree k and whose
other vertices have degree d+1.  Its main objects are:

* complete rooted subtrees and their planar leaf order (`trees`),
* finite permutation groups D and finitely supported D-labelled
  automorphisms, i.e. portraits (`localgroup`),
* tree-pair diagrams for the Higman-Thompson groups V_{d,k} (`thompson`),
* decorated diagrams for almost automorphisms with local action in D,
  together with the compact-part machinery (`aaut`),
* a cost-tracked rewriting engine over the two-scale alphabet
  "diagram generators + compact letters", producing verifiable traces
  (`rewriting`),
* self-similar automaton groups, nuclei, pattern sets and branch-group
  index checks (`selfsim`).

Everything is exact integer/permutation combinatorics; no floating point
is involved anywhere.
"""

from . import trees, localgroup, thompson, aaut, rewriting, selfsim

__version__ = "0.1.0"

__all__ = [
    "trees",
    "localgroup",
    "thompson",
    "aaut",
    "rewriting",
    "selfsim",
]
