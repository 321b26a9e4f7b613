"""Per-claim three-layer evidence graph construction."""
from __future__ import annotations

from dataclasses import dataclass, field

from .corpus import Claim, Dataset, Document, EvidenceSentence


class GraphError(ValueError):
    """Raised when a graph references ids absent from the dataset."""


@dataclass
class ThreeLayerGraph:
    """Evidence / context / reference vertices for one claim.

    The evidence layer is fully connected; each evidence sentence links to
    exactly one context document and to zero or more reference documents.
    Shared contexts are instantiated once and referenced by id.
    """
    claim_id: str
    evidence: list[EvidenceSentence]                  # order preserved from input
    contexts: dict[str, Document]                     # context id -> document
    references: dict[str, Document]                   # reference id -> document
    context_of: dict[str, str] = field(default_factory=dict)     # evidence id -> context id
    references_of: dict[str, list[str]] = field(default_factory=dict)

    def intra_layer_pairs(self):
        """Directed (e, e') neighbor relations on the evidence layer."""
        ids = [e.id for e in self.evidence]
        return [(a, b) for a in ids for b in ids if a != b]


def build_graph(claim: Claim, dataset: Dataset, evidence_ids=None) -> ThreeLayerGraph:
    """Build the graph from gold evidence, or from retrieved ids when given."""
    ids = list(evidence_ids) if evidence_ids is not None else list(claim.evidence_ids)
    evidence = []
    contexts: dict[str, Document] = {}
    references: dict[str, Document] = {}
    context_of: dict[str, str] = {}
    references_of: dict[str, list[str]] = {}
    for eid in ids:
        if eid not in dataset.evidence:
            raise GraphError(f"claim {claim.id}: unresolved evidence id {eid!r}")
        e = dataset.evidence[eid]
        evidence.append(e)
        if e.context_id not in dataset.contexts:
            raise GraphError(f"evidence {eid}: unresolved context id {e.context_id!r}")
        contexts[e.context_id] = dataset.contexts[e.context_id]
        context_of[eid] = e.context_id
        references_of[eid] = list(e.reference_ids)
        for rid in e.reference_ids:
            if rid not in dataset.references:
                raise GraphError(f"evidence {eid}: unresolved reference id {rid!r}")
            references[rid] = dataset.references[rid]
    return ThreeLayerGraph(claim.id, evidence, contexts, references, context_of, references_of)


def graph_stats(graph: ThreeLayerGraph) -> dict[str, int]:
    return {
        "evidence": len(graph.evidence),
        "contexts": len(graph.contexts),
        "references": len(graph.references),
        "intra_links": len(graph.intra_layer_pairs()),
        "context_links": len(graph.context_of),
        "reference_links": sum(len(v) for v in graph.references_of.values()),
    }


def graph_to_json(graph: ThreeLayerGraph) -> dict:
    """Debug adjacency dump."""
    return {
        "claim_id": graph.claim_id,
        "evidence": [e.id for e in graph.evidence],
        "intra_links": graph.intra_layer_pairs(),
        "context_links": {eid: cid for eid, cid in graph.context_of.items()},
        "reference_links": {eid: rids for eid, rids in graph.references_of.items()},
    }
