"""Model backends behind a small adapter interface.

The trainer only ever sees this interface:

    begin_stage(stage_config)       optimizer/accumulation state for a stage
    apply_adapter(adapter_config)   attach low-rank adapters / init params
    train_batch(samples, expl_weight) -> (l_classif, l_expl | None)
    evaluate_generate(image_ref, prompt) -> response text
    save(path) / load(path)

train_batch applies its own parameter update using the passed expl_weight,
reporting the label-segment loss as l_classif and the explanation-segment
loss as l_expl. MockAdapter is fully deterministic and is the only backend
the test suite touches; HFVLMAdapter wraps a real quantized-LoRA VLM and
needs the optional GPU stack.
"""

import hashlib
import json
import struct
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

from .instructions import split_label_explanation


class ModelAdapter(ABC):
    @abstractmethod
    def begin_stage(self, stage_config) -> None: ...

    @abstractmethod
    def apply_adapter(self, adapter_config) -> None: ...

    @abstractmethod
    def train_batch(self, samples: Sequence, expl_weight: float): ...

    @abstractmethod
    def evaluate_generate(self, image_ref: str, prompt: str) -> str: ...

    @abstractmethod
    def save(self, storage_ref: Path) -> None: ...

    @abstractmethod
    def load(self, storage_ref: Path) -> None: ...


def _unit_hash(text: str) -> float:
    """Stable hash of text into [0, 1)."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


class MockAdapter(ModelAdapter):
    """Deterministic scripted backend for pipeline and property tests.

    Losses come either from a scripted per-batch (l_classif, l_expl)
    transcript or are derived from stable hashes of the batch's label and
    explanation target segments, so the parameter update depends on
    explanation content only through expl_weight * l_expl. Generation picks
    a label (and a filler explanation) from a hash of the current parameter
    and the request, so dev metrics evolve as the parameter moves.
    """

    def __init__(
        self,
        seed: int = 0,
        label_set=None,
        script: Optional[Sequence] = None,
        respond: Optional[Union[dict, Callable[[str, str], str]]] = None,
    ):
        self.seed = seed
        self.label_set = label_set
        self.script = [tuple(entry) for entry in script] if script is not None else None
        self.respond = respond
        self._param = 0.0
        self._script_pos = 0
        self._batches = 0
        self._opt_steps = 0
        self._lr = 0.0
        self._grad_accum = 1
        self._accum = 0.0
        self._accum_n = 0

    # -- lifecycle -----------------------------------------------------

    def apply_adapter(self, adapter_config):
        self._param = _unit_hash(
            f"init|{self.seed}|{adapter_config.rank}|{adapter_config.alpha}|"
            f"{adapter_config.quantization_bits}"
        )

    def begin_stage(self, stage_config):
        self._lr = stage_config.learning_rate
        self._grad_accum = stage_config.grad_accum_steps
        self._accum = 0.0
        self._accum_n = 0

    # -- training ------------------------------------------------------

    def train_batch(self, samples, expl_weight):
        if self.script is not None:
            l_classif, l_expl = self.script[self._script_pos % len(self.script)]
            self._script_pos += 1
        else:
            label_parts = []
            expl_parts = []
            for sample in samples:
                label_part, expl_part = split_label_explanation(sample.target)
                label_parts.append(label_part)
                if expl_part is not None:
                    expl_parts.append(expl_part)
            l_classif = 0.5 + 2.0 * _unit_hash(
                f"classif|{self.seed}|{self._batches}|{'|'.join(label_parts)}"
            )
            l_expl = None
            if expl_parts:
                l_expl = 0.5 + 2.0 * _unit_hash(
                    f"expl|{self.seed}|{self._batches}|{'|'.join(expl_parts)}"
                )
        self._batches += 1
        # parameter update: explanation content reaches the parameter only
        # through expl_weight * l_expl
        grad = l_classif + expl_weight * (l_expl if l_expl is not None else 0.0)
        self._accum += grad
        self._accum_n += 1
        if self._accum_n >= self._grad_accum:
            self._param -= self._lr * self._accum / self._grad_accum
            self._accum = 0.0
            self._accum_n = 0
            self._opt_steps += 1
        return l_classif, l_expl

    @property
    def optimizer_steps(self) -> int:
        return self._opt_steps

    def param_bytes(self) -> bytes:
        """Exact parameter state, for bit-identity assertions."""
        return struct.pack("<d", self._param)

    # -- inference -----------------------------------------------------

    def evaluate_generate(self, image_ref, prompt):
        if callable(self.respond):
            return self.respond(image_ref, prompt)
        if isinstance(self.respond, dict):
            return self.respond[image_ref]
        if self.label_set is None:
            return "Label: unknown"
        pick = _unit_hash(f"gen|{self._param!r}|{image_ref}|{prompt}")
        label = self.label_set.labels[int(pick * len(self.label_set.labels))]
        filler = " ".join(
            f"w{int(_unit_hash(f'word|{image_ref}|{i}') * 100)}" for i in range(8)
        )
        return f"Label: {label}\nExplanation: the content shows {filler}."

    # -- persistence ---------------------------------------------------

    def save(self, storage_ref):
        path = Path(storage_ref)
        path.parent.mkdir(parents=True, exist_ok=True)
        state = {
            "seed": self.seed,
            "param_hex": self.param_bytes().hex(),
            "script_pos": self._script_pos,
            "batches": self._batches,
            "opt_steps": self._opt_steps,
        }
        path.write_text(json.dumps(state, sort_keys=True, indent=2) + "\n")

    def load(self, storage_ref):
        state = json.loads(Path(storage_ref).read_text())
        self.seed = state["seed"]
        self._param = struct.unpack("<d", bytes.fromhex(state["param_hex"]))[0]
        self._script_pos = state["script_pos"]
        self._batches = state["batches"]
        self._opt_steps = state["opt_steps"]
        self._accum = 0.0
        self._accum_n = 0


class HFVLMAdapter(ModelAdapter):
    """Quantized-LoRA fine-tuning backend for a real vision-language model.

    Needs the optional GPU stack (torch with CUDA, transformers, peft,
    bitsandbytes) and downloaded weights; import and construction fail with
    an actionable message otherwise. Strictly serial per device. Out of the
    test path by design.
    """

    _SUBMODULE_PATTERNS = {
        "vision": ["vision_model", "patch_embedding", "visual"],
        "language": ["embed_tokens", "lm_head"],
        "attention": ["q_proj", "k_proj", "v_proj", "o_proj"],
        "mlp": ["gate_proj", "up_proj", "down_proj", "fc1", "fc2"],
    }

    def __init__(self, model_name: str, device: str = "cuda", max_new_tokens: int = 160):
        try:
            import torch
            from transformers import AutoModelForVision2Seq, AutoProcessor
        except ImportError as exc:
            raise RuntimeError(
                "HFVLMAdapter needs torch and transformers; install the GPU extras"
            ) from exc
        self._torch = torch
        self.device = device
        self.max_new_tokens = max_new_tokens
        self.processor = AutoProcessor.from_pretrained(model_name)
        self.model = AutoModelForVision2Seq.from_pretrained(model_name)
        self.model.to(device)
        self._optimizer = None
        self._scheduler = None
        self._grad_accum = 1
        self._accum_n = 0

    def apply_adapter(self, adapter_config):
        try:
            from peft import LoraConfig, get_peft_model
        except ImportError as exc:
            raise RuntimeError("LoRA adapters need the 'peft' package") from exc
        targets = []
        for group in adapter_config.target_submodules:
            targets.extend(self._SUBMODULE_PATTERNS.get(group, []))
        lora = LoraConfig(
            r=adapter_config.rank,
            lora_alpha=adapter_config.alpha,
            lora_dropout=adapter_config.dropout,
            target_modules=targets,
        )
        self.model = get_peft_model(self.model, lora)

    def begin_stage(self, stage_config):
        torch = self._torch
        params = [p for p in self.model.parameters() if p.requires_grad]
        self._optimizer = torch.optim.AdamW(
            params, lr=stage_config.learning_rate, weight_decay=stage_config.weight_decay
        )
        from transformers import get_linear_schedule_with_warmup

        self._scheduler = get_linear_schedule_with_warmup(
            self._optimizer, stage_config.warmup_steps, max(stage_config.epochs * 1000, 1)
        )
        self._grad_accum = stage_config.grad_accum_steps
        self._accum_n = 0

    def _segment_loss(self, logits, labels, mask):
        torch = self._torch
        shifted_logits = logits[:, :-1].contiguous()
        shifted_labels = labels[:, 1:].contiguous()
        shifted_mask = mask[:, 1:].contiguous()
        loss = torch.nn.functional.cross_entropy(
            shifted_logits.view(-1, shifted_logits.size(-1)),
            shifted_labels.view(-1),
            reduction="none",
        )
        loss = loss.view(shifted_labels.shape) * shifted_mask
        denom = shifted_mask.sum().clamp(min=1)
        return loss.sum() / denom

    def train_batch(self, samples, expl_weight):
        """Token losses over the label segment vs the explanation segment.

        The two segments of each target are located by their line prefixes;
        the combined objective l_classif + expl_weight * l_expl is
        backpropagated, stepping the optimizer on the accumulation boundary.
        """
        torch = self._torch
        from PIL import Image

        images = [Image.open(s.image_ref).convert("RGB") for s in samples]
        prompts = [s.instruction for s in samples]
        targets = [s.target for s in samples]
        batch = self.processor(
            images=images, text=[f"{p}\n{t}" for p, t in zip(prompts, targets)],
            return_tensors="pt", padding=True
        ).to(self.device)
        labels = batch["input_ids"].clone()
        outputs = self.model(**batch)
        label_mask = torch.zeros_like(labels, dtype=torch.float)
        expl_mask = torch.zeros_like(labels, dtype=torch.float)
        for row, target in enumerate(targets):
            label_text, expl_text = split_label_explanation(target)
            label_ids = self.processor.tokenizer(
                "Label: " + label_text, add_special_tokens=False
            )["input_ids"]
            self._mark_subsequence(labels[row], label_ids, label_mask[row])
            if expl_text:
                expl_ids = self.processor.tokenizer(
                    "Explanation: " + expl_text, add_special_tokens=False
                )["input_ids"]
                self._mark_subsequence(labels[row], expl_ids, expl_mask[row])
        l_classif = self._segment_loss(outputs.logits, labels, label_mask)
        has_expl = bool(expl_mask.sum().item())
        l_expl = self._segment_loss(outputs.logits, labels, expl_mask) if has_expl else None
        total = l_classif + expl_weight * (l_expl if l_expl is not None else 0.0)
        (total / self._grad_accum).backward()
        self._accum_n += 1
        if self._accum_n >= self._grad_accum:
            self._optimizer.step()
            self._scheduler.step()
            self._optimizer.zero_grad()
            self._accum_n = 0
        return (
            float(l_classif.detach().cpu()),
            float(l_expl.detach().cpu()) if l_expl is not None else None,
        )

    @staticmethod
    def _mark_subsequence(ids_row, needle, mask_row):
        ids = ids_row.tolist()
        n = len(needle)
        for start in range(len(ids) - n + 1):
            if ids[start : start + n] == needle:
                mask_row[start : start + n] = 1.0
                return

    def evaluate_generate(self, image_ref, prompt):
        from PIL import Image

        image = Image.open(image_ref).convert("RGB")
        batch = self.processor(images=[image], text=[prompt], return_tensors="pt").to(self.device)
        with self._torch.no_grad():
            out = self.model.generate(**batch, max_new_tokens=self.max_new_tokens, do_sample=False)
        return self.processor.batch_decode(out, skip_special_tokens=True)[0]

    def save(self, storage_ref):
        Path(storage_ref).mkdir(parents=True, exist_ok=True)
        self.model.save_pretrained(str(storage_ref))

    def load(self, storage_ref):
        from peft import PeftModel

        base = getattr(self.model, "base_model", self.model)
        self.model = PeftModel.from_pretrained(base, str(storage_ref))
        self.model.to(self.device)
