"""Real model runners.

torch and transformers are imported lazily so that fixture-mode deployments
never pay for (or require) them. Every runner exposes the same surface:
``run(items) -> results``, one result per item, deterministic for a given
model and input. Sampling is never used; generation is greedy regardless of
the temperature a client sends.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

from .errors import StartupError

if TYPE_CHECKING:
    from .bindings import ModelBinding


def _source(binding: "ModelBinding") -> str:
    return binding.model_path or binding.model_name


class EmbedRunner:
    def __init__(self, binding: "ModelBinding"):
        import torch
        from transformers import AutoModel, AutoTokenizer

        self._torch = torch
        self.tokenizer = AutoTokenizer.from_pretrained(_source(binding))
        self.model = AutoModel.from_pretrained(_source(binding))
        self.model.to(binding.device)
        self.model.eval()
        self.device = binding.device

    def run(self, items: list[str]) -> list[list[float]]:
        torch = self._torch
        encoded = self.tokenizer(
            items, padding=True, truncation=True, return_tensors="pt")
        encoded = {k: v.to(self.device) for k, v in encoded.items()}
        with torch.no_grad():
            hidden = self.model(**encoded).last_hidden_state
        # Mean pool over real tokens only.
        mask = encoded["attention_mask"].unsqueeze(-1).to(hidden.dtype)
        summed = (hidden * mask).sum(dim=1)
        counts = mask.sum(dim=1).clamp(min=1)
        pooled = summed / counts
        return [row.tolist() for row in pooled.cpu()]


class RerankRunner:
    def __init__(self, binding: "ModelBinding"):
        import torch
        from transformers import AutoModelForSequenceClassification, AutoTokenizer

        self._torch = torch
        self.tokenizer = AutoTokenizer.from_pretrained(_source(binding))
        self.model = AutoModelForSequenceClassification.from_pretrained(
            _source(binding))
        self.model.to(binding.device)
        self.model.eval()
        self.device = binding.device
        self.normalized = binding.normalized

    def run(self, items: list[tuple[str, str]]) -> list[float]:
        torch = self._torch
        queries = [q for q, _ in items]
        passages = [p for _, p in items]
        encoded = self.tokenizer(
            queries, passages, padding=True, truncation=True,
            return_tensors="pt")
        encoded = {k: v.to(self.device) for k, v in encoded.items()}
        with torch.no_grad():
            logits = self.model(**encoded).logits
        if logits.shape[-1] == 1:
            scores = logits.squeeze(-1)
        else:
            # Multi-label heads: score relevance as the last class logit.
            scores = logits[:, -1]
        if self.normalized:
            scores = torch.sigmoid(scores)
        return [float(s) for s in scores.cpu()]


class GenerateRunner:
    def __init__(self, binding: "ModelBinding"):
        import torch
        from transformers import AutoModelForCausalLM, AutoTokenizer

        self._torch = torch
        self.tokenizer = AutoTokenizer.from_pretrained(_source(binding))
        self.model = AutoModelForCausalLM.from_pretrained(_source(binding))
        self.model.to(binding.device)
        self.model.eval()
        self.device = binding.device
        if self.tokenizer.pad_token_id is None:
            self.tokenizer.pad_token = self.tokenizer.eos_token

    def run(self, items: list[tuple[str, int]]) -> list[str]:
        torch = self._torch
        # The checkpoint cannot attend past its positional window, so the
        # requested budget is capped by what the model actually supports.
        window = getattr(self.model.config, "max_position_embeddings", None)
        texts = []
        for prompt, max_tokens in items:
            encoded = self.tokenizer(prompt, return_tensors="pt")
            encoded = {k: v.to(self.device) for k, v in encoded.items()}
            prompt_len = encoded["input_ids"].shape[1]
            budget = max(1, max_tokens)
            if window is not None:
                budget = max(1, min(budget, int(window) - prompt_len - 1))
            with torch.no_grad():
                output = self.model.generate(
                    **encoded,
                    do_sample=False,
                    num_beams=1,
                    max_new_tokens=budget,
                    pad_token_id=self.tokenizer.pad_token_id,
                )
            texts.append(self.tokenizer.decode(
                output[0][prompt_len:], skip_special_tokens=True))
        return texts


_RUNNERS = {
    "embed": EmbedRunner,
    "rerank": RerankRunner,
    "generate": GenerateRunner,
}


def build_runner(binding: "ModelBinding"):
    """Loads the model for one binding; failure is a startup failure."""
    try:
        return _RUNNERS[binding.kind](binding)
    except StartupError:
        raise
    except Exception as exc:
        raise StartupError(
            f"could not load model for binding {binding.label}: {exc}"
        ) from exc
