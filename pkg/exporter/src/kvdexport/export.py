"""Extract a pretrained rotary-attention model's KV cache into a .kvd file.

The exporter runs one forward pass over context + continuation tokens and
captures, per layer, the post-RoPE query/key tensors exactly as the model
computed them (by wrapping the model family's rotary application function)
plus the value projections (forward hooks). Nothing is recomputed from
weights, so whatever numeric choices the model makes are preserved.

The output file carries, per layer: RoPE-encoded keys/values for each KV
head, query matrices for each query head, rope metadata read from the model
config (theta base, half-split pairing, contiguous grouping), continuation
token ids with their teacher-forcing reference logits, and per-head
reference attention outputs for cross-implementation validation.
"""

from __future__ import annotations

import importlib
import json
import math
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np
import torch

from .kvdwrite import write_kvd_file

# model families whose attention layout this exporter understands: rotary
# embeddings applied through module-level apply_rotary_pos_emb, contiguous
# GQA grouping, and per-layer self_attn.v_proj projections
SUPPORTED_FAMILIES = ("llama", "qwen2", "mistral", "qwen3")


class ExportError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExportSpec:
    model_id: str
    context_len: int
    cont_len: int
    out_path: str
    text_path: str | None = None
    tokens_path: str | None = None

    def __post_init__(self):
        if self.context_len < 2:
            raise ExportError("context length must be >= 2")
        if self.cont_len < 1:
            raise ExportError("continuation length must be >= 1")
        if (self.text_path is None) == (self.tokens_path is None):
            raise ExportError("provide exactly one of text or tokens input")


def _rope_theta(config) -> float:
    """Rotary frequency base across transformers config layouts."""
    theta = getattr(config, "rope_theta", None)
    if theta is not None:
        return float(theta)
    params = getattr(config, "rope_parameters", None)
    if isinstance(params, dict) and "rope_theta" in params:
        rope_type = params.get("rope_type", "default")
        if rope_type != "default":
            raise ExportError(
                f"rope_type {rope_type!r} rescales frequencies; only plain "
                f"rotary embeddings are supported")
        return float(params["rope_theta"])
    raise ExportError("model config declares no rotary frequency base")


def _load_model(model_id: str):
    from transformers import AutoConfig, AutoModelForCausalLM

    config = AutoConfig.from_pretrained(model_id)
    if config.model_type not in SUPPORTED_FAMILIES:
        raise ExportError(
            f"model type {config.model_type!r} is not a supported rotary-attention "
            f"layout; supported families: {', '.join(SUPPORTED_FAMILIES)}")
    _rope_theta(config)
    model = AutoModelForCausalLM.from_pretrained(
        model_id, dtype=torch.float32, attn_implementation="eager")
    model.eval()
    return model, config


def _tokenize(spec: ExportSpec, model_id: str) -> np.ndarray:
    needed = spec.context_len + spec.cont_len
    if spec.tokens_path is not None:
        with open(spec.tokens_path) as fh:
            ids = json.load(fh)
        tokens = np.asarray(ids, dtype=np.int64)
    else:
        from transformers import AutoTokenizer

        tokenizer = AutoTokenizer.from_pretrained(model_id)
        with open(spec.text_path) as fh:
            text = fh.read()
        tokens = np.asarray(tokenizer(text)["input_ids"], dtype=np.int64)
    if tokens.size < needed:
        raise ExportError(
            f"input provides {tokens.size} tokens, need context + continuation "
            f"= {needed}")
    return tokens[:needed]


@contextmanager
def _capture_rotary(model):
    """Record every (q, k) pair the model's rotary application produces."""
    module = importlib.import_module(type(model).__module__)
    if not hasattr(module, "apply_rotary_pos_emb"):
        raise ExportError("model module lacks apply_rotary_pos_emb; "
                          "attention layout unsupported")
    original = module.apply_rotary_pos_emb
    records = []

    def recorder(q, k, cos, sin, *args, **kwargs):
        q_rot, k_rot = original(q, k, cos, sin, *args, **kwargs)
        records.append((q_rot.detach().to(torch.float32).cpu(),
                        k_rot.detach().to(torch.float32).cpu()))
        return q_rot, k_rot

    module.apply_rotary_pos_emb = recorder
    try:
        yield records
    finally:
        module.apply_rotary_pos_emb = original


def export_cache(spec: ExportSpec) -> dict:
    """Run the export and write the .kvd file. Returns the manifest fields."""
    model, config = _load_model(spec.model_id)
    tokens = _tokenize(spec, spec.model_id)
    n, t = spec.context_len, spec.cont_len

    n_layers = config.num_hidden_layers
    n_q = config.num_attention_heads
    n_kv = getattr(config, "num_key_value_heads", n_q) or n_q
    head_dim = getattr(config, "head_dim", None) or config.hidden_size // n_q

    v_records = []
    hooks = []
    layers = model.model.layers
    for layer in layers:
        if not hasattr(layer.self_attn, "v_proj"):
            raise ExportError("attention layer lacks v_proj; layout unsupported")
        hooks.append(layer.self_attn.v_proj.register_forward_hook(
            lambda mod, inp, out: v_records.append(
                out.detach().to(torch.float32).cpu())))

    ids = torch.tensor(tokens[None, :], dtype=torch.long)
    with _capture_rotary(model) as qk_records:
        with torch.no_grad():
            logits = model(ids).logits[0].to(torch.float32).cpu().numpy()
    for hook in hooks:
        hook.remove()

    if len(qk_records) != n_layers or len(v_records) != n_layers:
        raise ExportError(
            f"captured {len(qk_records)} rotary and {len(v_records)} value "
            f"records for {n_layers} layers; attention layout unsupported")

    tensors: dict = {}
    tensors["positions"] = (np.arange(n, dtype=np.float64), "f64")
    scale = 1.0 / math.sqrt(head_dim)
    for li in range(n_layers):
        q_rot, k_rot = qk_records[li]            # (1, heads, N+T, d)
        values = v_records[li][0]                # (N+T, n_kv * d)
        values = values.reshape(-1, n_kv, head_dim)
        q_ctx = q_rot[0, :, :n, :]               # (n_q, N, d)
        k_ctx = k_rot[0, :, :n, :]               # (n_kv, N, d)
        for h in range(n_kv):
            tensors[f"layer{li}.kvhead{h}.keys"] = (k_ctx[h].numpy(), "f32")
            tensors[f"layer{li}.kvhead{h}.values"] = (values[:n, h, :].numpy(), "f32")
        for h in range(n_q):
            tensors[f"layer{li}.qhead{h}.queries"] = (q_ctx[h].numpy(), "f32")
        # reference attention outputs over the full context cache, computed
        # here in torch so the consumer can cross-check its own attention
        group = n_q // n_kv
        for h in range(n_q):
            kv = h // group
            scores = (q_ctx[h] @ k_ctx[kv].T) * scale
            probs = torch.softmax(scores, dim=1)
            ref = probs @ values[:n, kv, :]
            tensors[f"ref.attnout.layer{li}.qhead{h}"] = (ref.numpy(), "f32")

    tensors["ref.tokens"] = (tokens[n:n + t].astype(np.float64), "f64")
    tensors["ref.logits"] = (logits[n:n + t], "f32")
    tensors["context.tokens"] = (tokens[:n].astype(np.float64), "f64")

    manifest = {
        "kind": "full",
        "shape": {
            "num_layers": n_layers,
            "num_q_heads": n_q,
            "num_kv_heads": n_kv,
            "head_dim": head_dim,
        },
        "rope": {
            "theta_base": _rope_theta(config),
            "pairing": "half",
            "grouping": "contiguous",
        },
        "context_len": n,
        "source_model": str(spec.model_id),
    }
    write_kvd_file(spec.out_path, manifest, tensors)
    return manifest
