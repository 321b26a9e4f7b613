"""Training loop, evaluation, ablation variants, attention reports."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import LABELS, Claim, Dataset, Vocab, tokenize
from .encoder import (EncoderParams, GnnParams, StepParams, encode_evidence_graph,
                      init_encoder_params, pool_evidence)
from .graph import build_graph, graph_to_json
from .metrics import EvalReport, compute_report
from .prompting import (PromptBank, condition_prompts, contrastive_loss, encode_claim,
                        init_prompt_bank, predict, verdict_scores)
from .retrieval import bm25_index, bm25_topk
from .tensor import Tensor

HEADS = ("prompting", "mlp-classifier", "evidence-as-prompt")

ABLATION_VARIANTS = ("no-evidence-layer", "no-context-layer", "no-reference-layer",
                     "M-sweep", "random-prompt-init", "no-prompt-encoder",
                     "mlp-classifier", "evidence-as-prompt")


@dataclass
class ModelConfig:
    """Architecture + training hyperparameters. Desk-scale defaults; the
    original-scale preset (L=12, d=768) is available via `paper_preset`."""
    n_steps: int = 3          # L
    d: int = 64
    n_heads: int = 4
    n_prompts: int = 8        # M
    tau: float = 100.0
    max_len: int = 32
    optimizer: str = "adam"
    lr: float = 1e-3
    epochs: int = 50
    batch_size: int = 8
    seed: int = 0
    evidence_mode: str = "gold"      # gold | retrieved
    retrieve_k: int = 3
    exclude_nei: bool = False        # drop NEI claims (retrieved-mode protocol option)
    min_count: int = 1
    grad_clip: float = 1.0
    use_evidence_layer: bool = True
    use_context_layer: bool = True
    use_reference_layer: bool = True
    prompt_random_init: bool = False
    use_prompt_encoder: bool = True
    head: str = "prompting"
    early_stop_train_f1: float = 0.0  # stop once train micro F1 reaches this (0 = never)

    def validate(self):
        if self.d % self.n_heads != 0:
            raise ValueError(f"d={self.d} not divisible by n_heads={self.n_heads}")
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.n_prompts < 0:
            raise ValueError(f"n_prompts must be >= 0, got {self.n_prompts}")
        if self.evidence_mode not in ("gold", "retrieved"):
            raise ValueError(f"unknown evidence_mode {self.evidence_mode!r}")
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}, expected one of {HEADS}")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")

    def hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def paper_preset(**overrides) -> ModelConfig:
    cfg = ModelConfig(n_steps=12, d=768, n_heads=12, n_prompts=8, tau=100.0, max_len=128)
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


@dataclass
class MlpHead:
    """Ablation head: [evidence || claim] -> one hidden layer -> class logits.

    Column concatenation is expressed as a sum of two input projections."""
    w_evidence: Tensor
    w_claim: Tensor
    b_hidden: Tensor
    w_out: dict[str, Tensor]   # label -> (d, 1)
    b_out: dict[str, Tensor]   # label -> (1, 1)

    def named_parameters(self):
        yield "mlp.w_evidence", self.w_evidence
        yield "mlp.w_claim", self.w_claim
        yield "mlp.b_hidden", self.b_hidden
        for label in LABELS:
            yield f"mlp.w_out.{label}", self.w_out[label]
            yield f"mlp.b_out.{label}", self.b_out[label]


def init_mlp_head(d: int, rng: np.random.Generator) -> MlpHead:
    bound = 1.0 / math.sqrt(d)
    return MlpHead(
        w_evidence=T.parameter(rng.uniform(-bound, bound, size=(d, d))),
        w_claim=T.parameter(rng.uniform(-bound, bound, size=(d, d))),
        b_hidden=T.parameter(np.zeros((1, d))),
        w_out={l: T.parameter(rng.uniform(-bound, bound, size=(d, 1))) for l in LABELS},
        b_out={l: T.parameter(np.zeros((1, 1))) for l in LABELS},
    )


class Model:
    """Bundles config, vocabulary, encoder parameters, and the verdict head."""

    def __init__(self, cfg: ModelConfig, vocab: Vocab, encoder: EncoderParams,
                 bank: PromptBank, mlp: MlpHead):
        self.cfg = cfg
        self.vocab = vocab
        self.encoder = encoder
        self.bank = bank
        self.mlp = mlp
        self._token_cache: dict[str, list[int]] = {}

    @classmethod
    def build(cls, cfg: ModelConfig, dataset: Dataset, vocab: Vocab) -> "Model":
        cfg.validate()
        rng = np.random.default_rng(cfg.seed)
        encoder = init_encoder_params(len(vocab), cfg.d, cfg.n_heads, cfg.n_steps,
                                      cfg.max_len, rng)
        bank = init_prompt_bank(dataset, cfg.n_prompts, cfg.tau, encoder, vocab,
                                rng, random_init=cfg.prompt_random_init)
        mlp = init_mlp_head(cfg.d, rng)
        return cls(cfg, vocab, encoder, bank, mlp)

    # -- parameters -------------------------------------------------------

    def named_parameters(self):
        yield from self.encoder.named_parameters()
        yield from self.bank.named_parameters()
        yield from self.mlp.named_parameters()

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    # -- encoding ---------------------------------------------------------

    def token_ids(self, key: str, text: str) -> list[int]:
        ids = self._token_cache.get(key)
        if ids is None:
            ids = tokenize(text, self.vocab, self.cfg.max_len)
            self._token_cache[key] = ids
        return ids

    def _graph_token_ids(self, graph) -> dict[str, list[int]]:
        out = {}
        for e in graph.evidence:
            out[e.id] = self.token_ids(e.id, e.text)
        for cid, doc in graph.contexts.items():
            out[cid] = self.token_ids(cid, doc.text)
        for rid, doc in graph.references.items():
            out[rid] = self.token_ids(rid, doc.text)
        return out

    def forward(self, claim: Claim, dataset: Dataset, evidence_ids=None,
                collect_trace: bool = False) -> dict:
        """Loss / scores / prediction for one claim; also returns attention
        traces when asked."""
        cfg = self.cfg
        graph = build_graph(claim, dataset, evidence_ids)
        h_list, traces = encode_evidence_graph(
            graph, self.encoder, self._graph_token_ids(graph),
            use_evidence_layer=cfg.use_evidence_layer,
            use_context_layer=cfg.use_context_layer,
            use_reference_layer=cfg.use_reference_layer,
            collect_trace=collect_trace)
        h_evidence = pool_evidence(h_list)
        claim_ids = self.token_ids("claim:" + claim.id, claim.text)

        if cfg.head == "mlp-classifier":
            h_claim = encode_claim(claim_ids, None, self.encoder, cfg.max_len)
            hidden = T.leaky_relu(T.add(
                T.add(T.matmul(h_evidence, self.mlp.w_evidence),
                      T.matmul(h_claim, self.mlp.w_claim)),
                self.mlp.b_hidden))
            scores = {label: T.add(T.matmul(hidden, self.mlp.w_out[label]),
                                   self.mlp.b_out[label])
                      for label in LABELS}
        else:
            if cfg.head == "evidence-as-prompt":
                pi = (T.concat_rows([h_evidence] * cfg.n_prompts)
                      if cfg.n_prompts > 0 else None)
                prompts = {label: pi for label in LABELS}
            elif cfg.n_prompts == 0:
                prompts = {label: None for label in LABELS}
            else:
                prompts = condition_prompts(h_evidence, self.bank,
                                            identity=not cfg.use_prompt_encoder)
            h_by_label = {label: encode_claim(claim_ids, prompts[label],
                                              self.encoder, cfg.max_len)
                          for label in LABELS}
            scores = verdict_scores(h_evidence, h_by_label)

        loss = contrastive_loss(scores, claim.label)
        return {
            "loss": loss,
            "scores": {l: s.data.item() for l, s in scores.items()},
            "prediction": predict(scores),
            "traces": traces,
            "graph": graph,
        }


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    def __init__(self, params: list[Tensor], lr: float = 1e-3,
                 betas=(0.9, 0.999), eps: float = 1e-8, clip_norm: float = 1.0):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data)
                 for p in self.params]
        if self.clip_norm > 0:
            total = math.sqrt(sum(float((g * g).sum()) for g in grads))
            if total > self.clip_norm:
                scale = self.clip_norm / total
                grads = [g * scale for g in grads]
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# ---------------------------------------------------------------------------
# retrieval plumbing


def retrieve_evidence(dataset: Dataset, claims, k: int) -> dict[str, list[str]]:
    """BM25 top-k evidence ids per claim over the dataset's evidence corpus."""
    index = bm25_index({eid: e.text for eid, e in dataset.evidence.items()})
    return {c.id: [sid for sid, _ in bm25_topk(index, c.text, k)] for c in claims}


def _active_claims(dataset: Dataset, cfg: ModelConfig):
    claims = dataset.ordered_claims()
    if cfg.exclude_nei and cfg.evidence_mode == "retrieved":
        claims = [c for c in claims if c.label != "NEI"]
    return claims


# ---------------------------------------------------------------------------
# training / evaluation


def train(cfg: ModelConfig, train_ds: Dataset, valid_ds: Dataset | None = None):
    """Run the optimization loop; returns (model, per-epoch history).

    Fully seed-deterministic at fixed precision. Aborts on non-finite loss
    with the offending epoch/step named.
    """
    cfg.validate()
    from .corpus import build_vocab
    vocab = build_vocab(train_ds, cfg.min_count)
    model = Model.build(cfg, train_ds, vocab)

    claims = _active_claims(train_ds, cfg)
    if not claims:
        raise ValueError("train split has no usable claims")
    retrieved = (retrieve_evidence(train_ds, claims, cfg.retrieve_k)
                 if cfg.evidence_mode == "retrieved" else {})
    valid_claims = _active_claims(valid_ds, cfg) if valid_ds is not None else []
    valid_retrieved = (retrieve_evidence(valid_ds, valid_claims, cfg.retrieve_k)
                       if valid_ds is not None and cfg.evidence_mode == "retrieved" else {})

    opt = Adam(model.parameters(), lr=cfg.lr, clip_norm=cfg.grad_clip)
    rng = np.random.default_rng(cfg.seed + 1)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(claims))
        epoch_loss = 0.0
        golds, preds = [], []
        for start in range(0, len(order), cfg.batch_size):
            batch = [claims[i] for i in order[start:start + cfg.batch_size]]
            losses = []
            for claim in batch:
                out = model.forward(claim, train_ds,
                                    evidence_ids=retrieved.get(claim.id))
                losses.append(out["loss"])
                golds.append(claim.label)
                preds.append(out["prediction"])
            batch_loss = T.scalar_divide(_sum(losses), len(losses))
            if not np.isfinite(batch_loss.data).all():
                raise RuntimeError(f"non-finite loss at epoch {epoch}, "
                                   f"step {start // cfg.batch_size}")
            opt.zero_grad()
            T.backward(batch_loss)
            opt.step()
            epoch_loss += batch_loss.data.item() * len(losses)
        train_report = compute_report(golds, preds, cfg.seed, cfg.hash())
        record = {
            "epoch": epoch,
            "train_loss": epoch_loss / len(claims),
            "train_micro_f1": train_report.micro_f1,
        }
        if valid_claims:
            vreport = evaluate(model, valid_ds, retrieved=valid_retrieved)
            record["valid_macro_f1"] = vreport.macro_f1
        history.append(record)
        if cfg.early_stop_train_f1 and train_report.micro_f1 >= cfg.early_stop_train_f1:
            break
    return model, history


def _sum(tensors):
    total = tensors[0]
    for t in tensors[1:]:
        total = T.add(total, t)
    return total


def evaluate(model: Model, dataset: Dataset, retrieved=None) -> EvalReport:
    """Metrics from argmax predictions over a split."""
    cfg = model.cfg
    claims = _active_claims(dataset, cfg)
    if not claims:
        raise ValueError(f"split {dataset.split!r} has no usable claims")
    if retrieved is None and cfg.evidence_mode == "retrieved":
        retrieved = retrieve_evidence(dataset, claims, cfg.retrieve_k)
    retrieved = retrieved or {}
    golds, preds = [], []
    for claim in claims:
        out = model.forward(claim, dataset, evidence_ids=retrieved.get(claim.id))
        golds.append(claim.label)
        preds.append(out["prediction"])
    return compute_report(golds, preds, cfg.seed, cfg.hash())


def ablate(cfg: ModelConfig, variant: str, train_ds: Dataset, test_ds: Dataset,
           valid_ds: Dataset | None = None, m_values=(2, 4, 8, 16)):
    """Train + evaluate an ablated configuration; returns [(tag, report), ...]."""
    if variant not in ABLATION_VARIANTS:
        raise ValueError(f"unknown ablation variant {variant!r}")
    variants: list[tuple[str, dict]] = []
    if variant == "M-sweep":
        variants = [(f"M={m}", {"n_prompts": m}) for m in m_values]
    else:
        overrides = {
            "no-evidence-layer": {"use_evidence_layer": False},
            "no-context-layer": {"use_context_layer": False},
            "no-reference-layer": {"use_reference_layer": False},
            "random-prompt-init": {"prompt_random_init": True},
            "no-prompt-encoder": {"use_prompt_encoder": False},
            "mlp-classifier": {"head": "mlp-classifier"},
            "evidence-as-prompt": {"head": "evidence-as-prompt"},
        }[variant]
        variants = [(variant, overrides)]
    results = []
    for tag, overrides in variants:
        sub = ModelConfig(**{**asdict(cfg), **overrides})
        model, _ = train(sub, train_ds, valid_ds)
        results.append((tag, evaluate(model, test_ds)))
    return results


def attention_report(model: Model, claim_id: str, dataset: Dataset,
                     evidence_ids=None) -> dict:
    """Case-study dump: per-step aggregation attention, scores, prediction."""
    if claim_id not in dataset.claims:
        raise KeyError(f"unknown claim id {claim_id!r}")
    claim = dataset.claims[claim_id]
    out = model.forward(claim, dataset, evidence_ids=evidence_ids, collect_trace=True)
    return {
        "claim_id": claim_id,
        "label": claim.label,
        "prediction": out["prediction"],
        "scores": out["scores"],
        "steps": out["traces"],
        "graph": graph_to_json(out["graph"]),
    }


# ---------------------------------------------------------------------------
# checkpoint round-trip


def save_model(path, model: Model, history=None):
    arrays = {name: t.data for name, t in model.named_parameters()}
    metadata = {
        "config": asdict(model.cfg),
        "vocab": model.vocab.id_to_token,
        "labels": list(LABELS),
        "history": history or [],
    }
    save_checkpoint(path, arrays, metadata)


def load_model(path) -> Model:
    arrays, metadata = load_checkpoint(path)
    cfg = ModelConfig(**metadata["config"])
    id_to_token = metadata["vocab"]
    vocab = Vocab({t: i for i, t in enumerate(id_to_token)}, id_to_token)
    model = Model.build(cfg, Dataset(), vocab)
    for name, t in model.named_parameters():
        if name not in arrays:
            raise ValueError(f"checkpoint missing parameter {name!r}")
        if tuple(arrays[name].shape) != t.data.shape:
            raise ValueError(f"checkpoint shape mismatch for {name!r}: "
                             f"{arrays[name].shape} vs {t.data.shape}")
        t.data = arrays[name].astype(np.float64)
    return model
