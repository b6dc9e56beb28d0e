"""Model adapters the bridge can serve.

A host owns one causal LM and exposes a single ``extend`` primitive over
per-segment KV state: new tokens attend densely to the supplied prefix
segments and causally within the segment, at arbitrary real-valued
positions.  Real positions are realized per positional-encoding family:

* alibi family (e.g. BLOOM): the additive attention bias is rebuilt from
  the actual key positions (bias = slope * key_position per head, which is
  the usual distance penalty up to a per-query constant that softmax
  ignores);
* rotary family (e.g. Llama): the rotation angle is the sinusoid argument,
  so fractional positions simply interpolate it via float position ids.

Checkpoints with learned absolute position embeddings cannot realize
fractional positions; they are refused with ``PositionUnsupported``.
"""

from __future__ import annotations

import numpy as np

from superprompt.model import ReferenceModel, alibi_slopes


class HostError(Exception):
    pass


class UnknownCacheId(HostError):
    pass


class PositionUnsupported(HostError):
    pass


ROTARY_TYPES = {"llama", "mistral", "gpt_neox", "qwen2", "gemma", "phi", "olmo"}
ALIBI_TYPES = {"bloom"}


class ReferenceHost:
    """Serves the engine's own reference model (for wire-parity checks)."""

    def __init__(self, scheme: str = "alibi"):
        self._model = ReferenceModel(scheme)
        self.model_id = self._model.model_id
        self.position_scheme = scheme
        self.supports_attention_summary = True
        self.eos_token_id = self._model.eos_token_id

    def shape_dict(self) -> dict:
        s = self._model.shape
        return {
            "param_count": s.param_count,
            "layers": s.layers,
            "d_model": s.d_model,
            "heads": s.heads,
            "head_dim": s.head_dim,
            "vocab": s.vocab,
            "position_scheme": s.position_scheme,
            "kv_bytes": s.kv_bytes,
        }

    def extend(self, prefix_states, tokens, positions, want_summary=False):
        result = self._model.extend(
            list(prefix_states), tuple(tokens), positions, want_summary=want_summary
        )
        summary = None if result.summary is None else [float(x) for x in result.summary]
        return result.cache, np.asarray(result.logits, dtype=np.float32), summary


class HfSegment:
    """Per-segment KV tensors: one (key, value) pair per layer, plus positions."""

    def __init__(self, layers, positions):
        self.layers = layers  # list of (k, v), each (1, heads, seq, head_dim)
        self.positions = positions

    def __len__(self):
        return len(self.positions)


class HfHost:
    """Serves a pretrained causal LM checkpoint through the extend primitive."""

    def __init__(self, checkpoint: str, inject_positions: bool = True):
        import torch
        from transformers import AutoConfig, AutoModelForCausalLM

        self._torch = torch
        self.config = AutoConfig.from_pretrained(checkpoint)
        self.model = AutoModelForCausalLM.from_pretrained(
            checkpoint, attn_implementation="eager"
        ).eval()
        self.inject_positions = inject_positions

        mtype = self.config.model_type
        if mtype in ALIBI_TYPES:
            self.position_scheme = "alibi"
        elif mtype in ROTARY_TYPES:
            self.position_scheme = "rotary"
        else:
            self.position_scheme = "learned"

        self.model_id = f"hf:{mtype}:{checkpoint}"
        self.supports_attention_summary = True
        eos = self.config.eos_token_id
        self.eos_token_id = int(eos) if eos is not None else -1
        self._heads = getattr(self.config, "num_attention_heads", None) or self.config.n_head
        self._layers = getattr(self.config, "num_hidden_layers", None) or self.config.n_layer
        self._d_model = getattr(self.config, "hidden_size", None) or self.config.n_embd

    def shape_dict(self) -> dict:
        params = sum(p.numel() for p in self.model.parameters())
        return {
            "param_count": float(params),
            "layers": int(self._layers),
            "d_model": int(self._d_model),
            "heads": int(self._heads),
            "head_dim": int(self._d_model // self._heads),
            "vocab": int(self.config.vocab_size),
            "position_scheme": self.position_scheme if self.position_scheme != "learned"
            else "rotary",
            "kv_bytes": 4,
        }

    def _check_positions(self, positions: np.ndarray) -> bool:
        integral = bool(np.all(positions == np.floor(positions)))
        if integral:
            return True
        if not self.inject_positions or self.position_scheme == "learned":
            raise PositionUnsupported(
                "backend cannot realize fractional positions for this checkpoint"
            )
        return False

    def _build_cache(self, prefix_states):
        from transformers import DynamicCache

        torch = self._torch
        cache = DynamicCache()
        if prefix_states:
            for li in range(self._layers):
                k = torch.cat([s.layers[li][0] for s in prefix_states], dim=2)
                v = torch.cat([s.layers[li][1] for s in prefix_states], dim=2)
                cache.update(k, v, li)
        return cache

    def extend(self, prefix_states, tokens, positions, want_summary=False):
        torch = self._torch
        positions = np.asarray(positions, dtype=np.float64)
        integral = self._check_positions(positions)

        past_len = sum(len(s) for s in prefix_states)
        past_pos = np.concatenate(
            [s.positions for s in prefix_states] + [positions]
        ) if prefix_states else positions
        cache = self._build_cache(prefix_states)
        ids = torch.tensor([list(tokens)], dtype=torch.long)
        kwargs = {
            "past_key_values": cache,
            "use_cache": True,
            "output_attentions": want_summary,
            "attention_mask": torch.ones(1, past_len + len(tokens), dtype=torch.long),
        }

        restore = None
        if self.position_scheme == "rotary":
            if integral:
                kwargs["position_ids"] = torch.tensor(
                    [positions.astype(np.int64).tolist()], dtype=torch.long)
            else:
                kwargs["position_ids"] = torch.tensor(
                    [positions.tolist()], dtype=torch.float32)
        elif self.position_scheme == "alibi" and self.inject_positions:
            base_model = self.model.transformer
            k_pos = torch.tensor(past_pos, dtype=torch.float32)
            slopes = torch.tensor(alibi_slopes(self._heads), dtype=torch.float32)

            def custom_alibi(attention_mask, num_heads, dtype):
                bias = slopes[:, None, None] * k_pos[None, None, :]
                return bias.to(dtype)

            restore = base_model.build_alibi_tensor
            base_model.build_alibi_tensor = custom_alibi

        try:
            with torch.no_grad():
                out = self.model(ids, **kwargs)
        finally:
            if restore is not None:
                base_model.build_alibi_tensor = restore

        new_layers = []
        for layer in out.past_key_values.layers:
            new_layers.append(
                (layer.keys[:, :, past_len:, :].clone(),
                 layer.values[:, :, past_len:, :].clone())
            )
        segment = HfSegment(new_layers, positions)
        logits = out.logits[0].to(torch.float32).numpy()

        summary = None
        if want_summary:
            stacked = torch.stack(out.attentions).to(torch.float64)  # (L,1,H,new,kv)
            masses = []
            offset = 0
            for state in prefix_states:
                masses.append(float(stacked[..., offset: offset + len(state)].sum(-1).mean()))
                offset += len(state)
            masses.append(float(stacked[..., offset:].sum(-1).mean()))
            summary = masses
        return segment, logits, summary


def load_host(uri: str):
    """reference-alibi | reference-rotary | hf:<checkpoint path or id>"""
    if uri == "reference-alibi":
        return ReferenceHost("alibi")
    if uri == "reference-rotary":
        return ReferenceHost("rotary")
    if uri.startswith("hf:"):
        return HfHost(uri.removeprefix("hf:"))
    raise ValueError(f"unknown host {uri!r}")
