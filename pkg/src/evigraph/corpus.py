"""Data model, JSONL ingestion, tokenizer/vocabulary, sampling, synthetic corpus."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

LABELS = ("SUPPORT", "REFUTE", "NEI")

PAD, UNK, CLS = 0, 1, 2
SPECIALS = ("[PAD]", "[UNK]", "[CLS]")

_WORD_RE = re.compile(r"[a-z0-9]+")
_SENT_RE = re.compile(r"[^.!?]+[.!?]?")


class DatasetError(ValueError):
    """Raised for schema violations, dangling ids, duplicate ids, bad labels."""


@dataclass
class Claim:
    id: str
    text: str
    label: str
    evidence_ids: list[str]


@dataclass
class EvidenceSentence:
    id: str
    text: str
    context_id: str
    reference_ids: list[str]


@dataclass
class Document:
    id: str
    text: str
    kind: str  # "context" | "reference"


@dataclass
class Vocab:
    token_to_id: dict[str, int]
    id_to_token: list[str]

    def __len__(self):
        return len(self.id_to_token)

    def get(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)


@dataclass
class Dataset:
    claims: dict[str, Claim] = field(default_factory=dict)
    evidence: dict[str, EvidenceSentence] = field(default_factory=dict)
    contexts: dict[str, Document] = field(default_factory=dict)
    references: dict[str, Document] = field(default_factory=dict)
    split: str = ""
    # preserves file / generation order for determinism
    claim_order: list[str] = field(default_factory=list)

    def ordered_claims(self) -> list[Claim]:
        return [self.claims[cid] for cid in self.claim_order]

    def validate(self):
        for c in self.claims.values():
            if c.label not in LABELS:
                raise DatasetError(f"claim {c.id}: unknown label {c.label!r}")
            for eid in c.evidence_ids:
                if eid not in self.evidence:
                    raise DatasetError(f"claim {c.id}: dangling evidence id {eid!r}")
        for e in self.evidence.values():
            if e.context_id not in self.contexts:
                raise DatasetError(f"evidence {e.id}: dangling context id {e.context_id!r}")
            for rid in e.reference_ids:
                if rid not in self.references:
                    raise DatasetError(f"evidence {e.id}: dangling reference id {rid!r}")

    def subset(self, claim_ids, split: str = "") -> "Dataset":
        """New dataset with a claim subset; evidence/document corpora are shared."""
        keep = set(claim_ids)
        sub = Dataset(
            claims={cid: self.claims[cid] for cid in keep},
            evidence=self.evidence,
            contexts=self.contexts,
            references=self.references,
            split=split or self.split,
            claim_order=[cid for cid in self.claim_order if cid in keep],
        )
        return sub


# ---------------------------------------------------------------------------
# tokenization


def word_tokens(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


def truncate_sentences(text: str, max_sentences: int) -> str:
    sents = [s.strip() for s in _SENT_RE.findall(text) if s.strip()]
    return " ".join(sents[:max_sentences])


def build_vocab(dataset: Dataset, min_count: int = 1) -> Vocab:
    """Frequency-ordered vocabulary over all texts; ties broken by token."""
    counts: dict[str, int] = {}
    texts = (
        [c.text for c in dataset.claims.values()]
        + [e.text for e in dataset.evidence.values()]
        + [d.text for d in dataset.contexts.values()]
        + [d.text for d in dataset.references.values()]
    )
    for text in texts:
        for tok in word_tokens(text):
            counts[tok] = counts.get(tok, 0) + 1
    kept = sorted((t for t, n in counts.items() if n >= min_count),
                  key=lambda t: (-counts[t], t))
    id_to_token = list(SPECIALS) + kept
    return Vocab({t: i for i, t in enumerate(id_to_token)}, id_to_token)


def tokenize(text: str, vocab: Vocab, max_len: int) -> list[int]:
    """[CLS]-prefixed id sequence, truncated to max_len."""
    if max_len < 2:
        raise ValueError(f"max_len must be >= 2, got {max_len}")
    ids = [CLS] + [vocab.get(t) for t in word_tokens(text)]
    return ids[:max_len]


def detokenize(ids, vocab: Vocab) -> list[str]:
    return [vocab.id_to_token[i] for i in ids]


# ---------------------------------------------------------------------------
# JSONL ingestion


def _read_jsonl(path, required_keys):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON ({exc})")
            for key in required_keys:
                if key not in obj:
                    raise DatasetError(f"{path}:{lineno}: missing key {key!r}")
            rows.append((lineno, obj))
    return rows


def load_dataset(claim_path, evidence_path, context_path, reference_path,
                 max_sentences: int = 20, split: str = "") -> Dataset:
    """Load and link a corpus from four JSONL files.

    Document texts are truncated to `max_sentences` sentences at ingest.
    Referential integrity is validated; violations name the file line.
    """
    ds = Dataset(split=split)
    for lineno, obj in _read_jsonl(context_path, ("id", "text")):
        if obj["id"] in ds.contexts:
            raise DatasetError(f"{context_path}:{lineno}: duplicate context id {obj['id']!r}")
        ds.contexts[obj["id"]] = Document(obj["id"], truncate_sentences(obj["text"], max_sentences), "context")
    for lineno, obj in _read_jsonl(reference_path, ("id", "text")):
        if obj["id"] in ds.references:
            raise DatasetError(f"{reference_path}:{lineno}: duplicate reference id {obj['id']!r}")
        ds.references[obj["id"]] = Document(obj["id"], truncate_sentences(obj["text"], max_sentences), "reference")
    for lineno, obj in _read_jsonl(evidence_path, ("id", "text", "context_id", "reference_ids")):
        if obj["id"] in ds.evidence:
            raise DatasetError(f"{evidence_path}:{lineno}: duplicate evidence id {obj['id']!r}")
        e = EvidenceSentence(obj["id"], obj["text"], obj["context_id"], list(obj["reference_ids"]))
        if e.context_id not in ds.contexts:
            raise DatasetError(f"{evidence_path}:{lineno}: evidence {e.id!r} has "
                               f"dangling context id {e.context_id!r}")
        for rid in e.reference_ids:
            if rid not in ds.references:
                raise DatasetError(f"{evidence_path}:{lineno}: evidence {e.id!r} has "
                                   f"dangling reference id {rid!r}")
        ds.evidence[e.id] = e
    for lineno, obj in _read_jsonl(claim_path, ("id", "text", "label", "evidence_ids")):
        if obj["id"] in ds.claims:
            raise DatasetError(f"{claim_path}:{lineno}: duplicate claim id {obj['id']!r}")
        c = Claim(obj["id"], obj["text"], obj["label"], list(obj["evidence_ids"]))
        if c.label not in LABELS:
            raise DatasetError(f"{claim_path}:{lineno}: unknown label {c.label!r}")
        for eid in c.evidence_ids:
            if eid not in ds.evidence:
                raise DatasetError(f"{claim_path}:{lineno}: claim {c.id!r} has "
                                   f"dangling evidence id {eid!r}")
        ds.claims[c.id] = c
        ds.claim_order.append(c.id)
    return ds


def save_dataset(ds: Dataset, claim_path, evidence_path, context_path, reference_path):
    with open(claim_path, "w", encoding="utf-8") as fh:
        for c in ds.ordered_claims():
            fh.write(json.dumps({"id": c.id, "text": c.text, "label": c.label,
                                 "evidence_ids": c.evidence_ids}) + "\n")
    with open(evidence_path, "w", encoding="utf-8") as fh:
        for e in sorted(ds.evidence.values(), key=lambda e: e.id):
            fh.write(json.dumps({"id": e.id, "text": e.text, "context_id": e.context_id,
                                 "reference_ids": e.reference_ids}) + "\n")
    with open(context_path, "w", encoding="utf-8") as fh:
        for d in sorted(ds.contexts.values(), key=lambda d: d.id):
            fh.write(json.dumps({"id": d.id, "text": d.text}) + "\n")
    with open(reference_path, "w", encoding="utf-8") as fh:
        for d in sorted(ds.references.values(), key=lambda d: d.id):
            fh.write(json.dumps({"id": d.id, "text": d.text}) + "\n")


# ---------------------------------------------------------------------------
# sampling and splitting


def sample_few_shot(dataset: Dataset, k: int, seed: int) -> Dataset:
    """Exactly k claims per label, seed-deterministic."""
    rng = np.random.default_rng(seed)
    chosen: list[str] = []
    for label in LABELS:
        ids = [cid for cid in dataset.claim_order if dataset.claims[cid].label == label]
        if len(ids) < k:
            raise DatasetError(f"label {label} has {len(ids)} claims, need {k} for few-shot sampling")
        picked = rng.choice(len(ids), size=k, replace=False)
        chosen.extend(ids[i] for i in sorted(picked))
    return dataset.subset(chosen, split="fewshot")


def _allocate(total: int, quotas) -> list[int]:
    """Largest-remainder apportionment of `total` items over real quotas."""
    scale = total / sum(quotas) if sum(quotas) else 0.0
    raw = [q * scale for q in quotas]
    counts = [int(np.floor(r)) for r in raw]
    short = total - sum(counts)
    order = sorted(range(len(raw)), key=lambda i: (raw[i] - counts[i]), reverse=True)
    for i in order[:short]:
        counts[i] += 1
    return counts


def split_dataset(dataset: Dataset, ratios, seed: int):
    """Stratified, seed-deterministic split into len(ratios) disjoint parts."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DatasetError(f"split ratios must sum to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    present = [l for l in LABELS if any(c.label == l for c in dataset.claims.values())]
    by_label = {l: [cid for cid in dataset.claim_order if dataset.claims[cid].label == l]
                for l in present}
    for label, ids in by_label.items():
        if not ids:
            raise DatasetError(f"label {label} is empty; stratified split impossible")
        if len(ids) < len(ratios):
            raise DatasetError(f"label {label} has {len(ids)} claims, "
                               f"fewer than {len(ratios)} split parts")

    n_total = len(dataset.claims)
    part_totals = _allocate(n_total, list(ratios))
    parts: list[list[str]] = [[] for _ in ratios]
    remaining = {l: list(ids) for l, ids in by_label.items()}
    for l in remaining:
        rng.shuffle(remaining[l])
    for p, target in enumerate(part_totals[:-1]):
        quotas = [len(by_label[l]) * ratios[p] for l in present]
        take = _allocate(target, quotas)
        # cap by availability, then top up from the largest leftover pools
        for i, l in enumerate(present):
            take[i] = min(take[i], len(remaining[l]))
        deficit = target - sum(take)
        while deficit > 0:
            l_idx = max(range(len(present)),
                        key=lambda i: len(remaining[present[i]]) - take[i])
            take[l_idx] += 1
            deficit -= 1
        for i, l in enumerate(present):
            parts[p].extend(remaining[l][:take[i]])
            remaining[l] = remaining[l][take[i]:]
    for l in present:
        parts[-1].extend(remaining[l])

    names = {2: ("train", "test"), 3: ("train", "valid", "test")}.get(
        len(ratios), tuple(f"part{i}" for i in range(len(ratios))))
    return tuple(dataset.subset(ids, split=name) for ids, name in zip(parts, names))


# ---------------------------------------------------------------------------
# synthetic corpus


@dataclass
class GenConfig:
    n_claims_per_class: int = 30
    n_entities: int = 8
    n_attributes: int = 5
    n_values: int = 10
    reference_fraction: float = 0.5  # fraction of claims whose identity link lives in a reference
    evidence_per_claim: int = 1
    nei_value_match: float = 0.5  # fraction of NEI evidence whose value agrees with the claim


_SYLLABLES = ["ba", "cor", "del", "fen", "gol", "hus", "jin", "kel", "lor", "mav",
              "nor", "pel", "quin", "ros", "sul", "tor", "vex", "wil", "yar", "zu"]
_ATTRIBUTES = ["budget", "staff", "output", "tenure", "rating", "reach", "volume",
               "growth", "margin", "score"]
_FILLER = ("the quarterly bulletin covers routine findings and schedules "
           "for upcoming internal reviews").split()


def _coin_word(rng, n_syll=3):
    return "".join(_SYLLABLES[rng.integers(0, len(_SYLLABLES))] for _ in range(n_syll))


def _unique_words(rng, n, n_syll=3, taken=None, tries_per_word=200):
    taken = set(taken or ())
    out = []
    for _ in range(n):
        for _ in range(tries_per_word):
            w = _coin_word(rng, n_syll)
            if w not in taken:
                taken.add(w)
                out.append(w)
                break
        else:
            raise DatasetError("vocabulary too small to generate unique aliases; "
                               "reduce corpus size or raise syllable budget")
    return out


def generate_synthetic(cfg: GenConfig, seed: int) -> Dataset:
    """Controlled corpus where the entity-identity link lives off the evidence.

    Each claim asserts an (entity, attribute, value) fact using the entity's
    full name. The matching evidence sentence names the entity only by a
    claim-unique alias (or acronym). The alias-entity identity appears only
    in a referential document; the acronym expansion only in the contextual
    document. SUPPORT: values agree; REFUTE: values conflict; NEI: the
    evidence concerns a different entity. Classes balanced, seed-pinned.
    """
    rng = np.random.default_rng(seed)
    if cfg.n_attributes > len(_ATTRIBUTES):
        raise DatasetError(f"n_attributes > {len(_ATTRIBUTES)} not supported")
    entities = _unique_words(rng, cfg.n_entities, n_syll=2)
    attributes = list(_ATTRIBUTES[:cfg.n_attributes])
    values = [f"level{i}" for i in range(cfg.n_values)]

    total = 3 * cfg.n_claims_per_class * cfg.evidence_per_claim
    aliases = _unique_words(rng, total, n_syll=3, taken=entities)
    alias_iter = iter(aliases)

    ds = Dataset(split="synthetic")
    serial = 0
    # SUPPORT and NEI share the same claim-fact triples so the claim text
    # alone carries no signal separating those two classes; only the linked
    # documents (which entity the alias resolves to) disambiguate them.
    shared = [(entities[rng.integers(0, len(entities))],
               attributes[rng.integers(0, len(attributes))],
               values[rng.integers(0, len(values))])
              for _ in range(cfg.n_claims_per_class)]
    for label in LABELS:
        for i in range(cfg.n_claims_per_class):
            if label == "REFUTE":
                entity = entities[rng.integers(0, len(entities))]
                attribute = attributes[rng.integers(0, len(attributes))]
                value = values[rng.integers(0, len(values))]
            else:
                entity, attribute, value = shared[i]
            claim_id = f"c{serial:04d}"
            claim_text = f"the {attribute} of {entity} is {value}"

            ev_ids = []
            for _ in range(cfg.evidence_per_claim):
                alias = next(alias_iter)
                ref_dependent = rng.random() < cfg.reference_fraction
                if label == "SUPPORT":
                    target, ev_value = entity, value
                elif label == "REFUTE":
                    other_vals = [v for v in values if v != value]
                    target, ev_value = entity, other_vals[rng.integers(0, len(other_vals))]
                else:  # NEI: different entity, value agrees half the time
                    others = [e for e in entities if e != entity]
                    target = others[rng.integers(0, len(others))]
                    ev_value = (value if rng.random() < cfg.nei_value_match
                                else values[rng.integers(0, len(values))])
                ev_id = f"e{serial:04d}-{len(ev_ids)}"
                ev_text = f"the {attribute} of {alias} is {ev_value}"
                ctx_id = f"ctx-{ev_id}"
                if ref_dependent:
                    ref_id = f"r-{ev_id}"
                    ds.references[ref_id] = Document(
                        ref_id, f"{alias} is formally known as {target}", "reference")
                    ds.contexts[ctx_id] = Document(ctx_id, " ".join(_FILLER), "context")
                    ref_ids = [ref_id]
                else:
                    ds.contexts[ctx_id] = Document(
                        ctx_id, f"{alias} stands for {target} . " + " ".join(_FILLER), "context")
                    ref_ids = []
                ds.evidence[ev_id] = EvidenceSentence(ev_id, ev_text, ctx_id, ref_ids)
                ev_ids.append(ev_id)

            ds.claims[claim_id] = Claim(claim_id, claim_text, label, ev_ids)
            ds.claim_order.append(claim_id)
            serial += 1
    ds.validate()
    return ds


def is_reference_dependent(claim: Claim, dataset: Dataset) -> bool:
    """True when any of the claim's evidence carries reference links."""
    return any(dataset.evidence[eid].reference_ids for eid in claim.evidence_ids)
