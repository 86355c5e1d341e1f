"""The full architecture: dual sequence encoders feeding a meta-predictor.

Four optional input components, keyed M/D/S/I throughout:
  M  macro feature vector            -> shared linear map (with D)
  D  latest delivery message vector  -> shared linear map (with M)
  S  per-session inputs              -> session LSTM, last hidden state
  I  per-session intent scores       -> intent LSTM, last hidden state

The predictor stacks ``n_layers`` dense transforms over the concatenated
enabled components. In the dynamic variant each layer's weights are an
attention blend of ``d`` shared basis matrices, with the attention computed
from the configured adjust signal; the static variant uses plain dense
layers of the same shapes; the generated variant emits each layer's weights
directly from the adjust signal. ReLU sits between predictor layers, never
after the final logits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import nn
from .domain import DELIVERY_DIM, MACRO_DIM, N_EVENT_TYPES, SESSION_INPUT_DIM

COMPONENTS = ("M", "D", "S", "I")
RESHAPE_CONVENTION = "row-major (m, n); rows index the input dimension"


class CompatibilityError(ValueError):
    """Checkpoint and requested configuration do not agree."""


@dataclass(frozen=True)
class DigmnConfig:
    task: str = "session"                  # day -> 3 classes, session -> 2
    intent_dim: int = 7                    # k, taken from the loaded basis
    session_lstm_hidden: int = 32
    intent_lstm_hidden: int = 32
    d: int = 4                             # basis count per dynamic layer
    n_layers: int = 3
    predictor_hidden: tuple[int, ...] = (64, 32)
    meta_hidden: int = 32
    beta: float = 1e-2
    intent_method: str = "cosine"          # cosine | learned
    predictor_kind: str = "dynamic"        # dynamic | static | generated
    adjust_signal: frozenset = frozenset({"I"})
    components_enabled: frozenset = frozenset({"M", "D", "S", "I"})
    linear_map_ratio: float = 0.5
    per_layer_attention: bool = False
    max_sessions: int = 128                # BPTT truncation cap
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "adjust_signal", frozenset(self.adjust_signal))
        object.__setattr__(self, "components_enabled", frozenset(self.components_enabled))
        object.__setattr__(self, "predictor_hidden", tuple(self.predictor_hidden))
        if self.task not in ("day", "session"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.intent_method not in ("cosine", "learned"):
            raise ValueError(f"unknown intent_method {self.intent_method!r}")
        if self.predictor_kind not in ("dynamic", "static", "generated"):
            raise ValueError(f"unknown predictor_kind {self.predictor_kind!r}")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if not 1 <= self.n_layers <= 5:
            raise ValueError("n_layers must lie in [1, 5]")
        if len(self.predictor_hidden) != self.n_layers - 1:
            raise ValueError(
                f"predictor_hidden needs {self.n_layers - 1} sizes for "
                f"{self.n_layers} layers, got {self.predictor_hidden}"
            )
        if not self.components_enabled:
            raise ValueError("at least one component must be enabled")
        for c in self.components_enabled | self.adjust_signal:
            if c not in COMPONENTS:
                raise ValueError(f"unknown component key {c!r}")
        if self.predictor_kind in ("dynamic", "generated"):
            if not self.adjust_signal:
                raise ValueError(f"{self.predictor_kind} predictor needs an adjust signal")
            if not self.adjust_signal <= self.components_enabled:
                raise ValueError("adjust_signal must be a subset of components_enabled")
        if not 0.0 < self.linear_map_ratio <= 1.0:
            raise ValueError("linear_map_ratio must lie in (0, 1]")
        if self.max_sessions < 1:
            raise ValueError("max_sessions must be >= 1")

    @property
    def n_classes(self) -> int:
        return 3 if self.task == "day" else 2

    @property
    def uses_md(self) -> bool:
        return bool(self.components_enabled & {"M", "D"})

    @property
    def uses_session(self) -> bool:
        return "S" in self.components_enabled

    @property
    def uses_intent(self) -> bool:
        return "I" in self.components_enabled

    @property
    def md_input_dim(self) -> int:
        dim = 0
        if "M" in self.components_enabled:
            dim += MACRO_DIM
        if "D" in self.components_enabled:
            dim += DELIVERY_DIM
        return dim

    @property
    def mapped_dim(self) -> int:
        return max(1, int(self.md_input_dim * self.linear_map_ratio)) if self.uses_md else 0

    @property
    def predictor_input_dim(self) -> int:
        dim = self.mapped_dim
        if self.uses_session:
            dim += self.session_lstm_hidden
        if self.uses_intent:
            dim += self.intent_lstm_hidden
        return dim

    @property
    def signal_dim(self) -> int:
        dim = self.mapped_dim if self.adjust_signal & {"M", "D"} else 0
        if "S" in self.adjust_signal:
            dim += self.session_lstm_hidden
        if "I" in self.adjust_signal:
            dim += self.intent_lstm_hidden
        return dim

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        sizes = [self.predictor_input_dim, *self.predictor_hidden, self.n_classes]
        return list(zip(sizes[:-1], sizes[1:]))

    def to_json_dict(self) -> dict:
        return {
            "task": self.task,
            "intent_dim": self.intent_dim,
            "session_lstm_hidden": self.session_lstm_hidden,
            "intent_lstm_hidden": self.intent_lstm_hidden,
            "d": self.d,
            "n_layers": self.n_layers,
            "predictor_hidden": list(self.predictor_hidden),
            "meta_hidden": self.meta_hidden,
            "beta": self.beta,
            "intent_method": self.intent_method,
            "predictor_kind": self.predictor_kind,
            "adjust_signal": sorted(self.adjust_signal),
            "components_enabled": sorted(self.components_enabled),
            "linear_map_ratio": self.linear_map_ratio,
            "per_layer_attention": self.per_layer_attention,
            "max_sessions": self.max_sessions,
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "DigmnConfig":
        d = dict(d)
        d["predictor_hidden"] = tuple(d.get("predictor_hidden", ()))
        d["adjust_signal"] = frozenset(d.get("adjust_signal", ()))
        d["components_enabled"] = frozenset(d.get("components_enabled", ()))
        return cls(**d)


@dataclass
class Batch:
    """Featurized records sharing one sequence length T.

    macro (B, 4), delivery (B, 9), sess_x (T, B, 16), freqs (T, B, 10),
    intents (T, B, k) precomputed cosine scores, labels (B,).
    """

    macro: np.ndarray
    delivery: np.ndarray
    sess_x: np.ndarray
    freqs: np.ndarray
    intents: np.ndarray
    labels: np.ndarray

    @property
    def size(self) -> int:
        return self.macro.shape[0]


class DigmnModel:
    """Parameter container plus hand-wired forward/backward."""

    def __init__(self, config: DigmnConfig):
        self.config = config
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xD16]))
        self._params: dict[str, nn.Param] = {}
        c = config

        if c.uses_md:
            w = nn.Param(
                "linear_map.w", nn.uniform_init(rng, (c.md_input_dim, c.mapped_dim), c.md_input_dim)
            )
            b = nn.Param("linear_map.b", np.zeros(c.mapped_dim))
            self.linear_map = (w, b)
            self._register(w, b)
        else:
            self.linear_map = None

        self.needs_session = c.uses_session or "S" in c.adjust_signal
        self.needs_intent = c.uses_intent or "I" in c.adjust_signal

        self.session_lstm = None
        if self.needs_session:
            self.session_lstm = nn.make_lstm_cell(
                rng, SESSION_INPUT_DIM, c.session_lstm_hidden, "session_lstm"
            )
            self._register(*self.session_lstm.params())

        self.intent_lstm = None
        self.learned_intent = None
        if self.needs_intent:
            if c.intent_method == "learned":
                w = nn.Param(
                    "learned_intent.w",
                    nn.uniform_init(rng, (c.intent_dim, N_EVENT_TYPES), N_EVENT_TYPES),
                )
                b = nn.Param("learned_intent.b", np.zeros(c.intent_dim))
                self.learned_intent = (w, b)
                self._register(w, b)
            self.intent_lstm = nn.make_lstm_cell(
                rng, c.intent_dim, c.intent_lstm_hidden, "intent_lstm"
            )
            self._register(*self.intent_lstm.params())

        self.fcd_layers: list[nn.FcdLayer] = []
        self.dense_layers: list[tuple[nn.Param, nn.Param]] = []
        self.gen_layers: list[nn.GenLayer] = []
        self.metas: list[nn.MetaNet] = []
        if c.predictor_kind == "dynamic":
            for i, (m, n) in enumerate(c.layer_dims):
                layer = nn.make_fcd_layer(rng, m, n, c.d, f"fcd{i}")
                self.fcd_layers.append(layer)
                self._register(*layer.params())
            n_metas = c.n_layers if c.per_layer_attention else 1
            for i in range(n_metas):
                prefix = f"meta{i}" if c.per_layer_attention else "meta"
                meta = nn.make_meta_net(rng, c.signal_dim, c.meta_hidden, c.d, prefix)
                self.metas.append(meta)
                self._register(*meta.params())
        elif c.predictor_kind == "static":
            for i, (m, n) in enumerate(c.layer_dims):
                w = nn.Param(f"dense{i}.w", nn.uniform_init(rng, (m, n), m))
                b = nn.Param(f"dense{i}.b", np.zeros(n))
                self.dense_layers.append((w, b))
                self._register(w, b)
        else:
            for i, (m, n) in enumerate(c.layer_dims):
                layer = nn.make_gen_layer(rng, c.signal_dim, c.meta_hidden, m, n, f"gen{i}")
                self.gen_layers.append(layer)
                self._register(*layer.params())

    def _register(self, *params: nn.Param) -> None:
        for p in params:
            if p.name in self._params:
                raise ValueError(f"duplicate param name {p.name}")
            self._params[p.name] = p

    def params(self) -> list[nn.Param]:
        return list(self._params.values())

    def param(self, name: str) -> nn.Param:
        return self._params[name]

    def zero_grads(self) -> None:
        nn.zero_grads(self.params())

    def n_parameters(self) -> int:
        return sum(p.value.size for p in self.params())

    # -- forward ------------------------------------------------------------

    def forward(self, batch: Batch):
        c = self.config
        cache: dict = {}
        parts = []

        mapped = None
        if c.uses_md:
            md_parts = []
            if "M" in c.components_enabled:
                md_parts.append(batch.macro)
            if "D" in c.components_enabled:
                md_parts.append(batch.delivery)
            md_in = np.concatenate(md_parts, axis=1)
            mapped, cache["md"] = nn.dense_forward(*self.linear_map, md_in)

        h_s = None
        if self.needs_session:
            if batch.sess_x.shape[0] < 1:
                raise ValueError("record has no sessions")
            sess_x = batch.sess_x[-c.max_sessions :]
            h_s, cache["sess"] = nn.lstm_forward(self.session_lstm, sess_x)

        i_tilde = None
        if self.needs_intent:
            if c.intent_method == "cosine":
                intents = batch.intents[-c.max_sessions :]
            else:
                freqs = batch.freqs[-c.max_sessions :]
                w, b = self.learned_intent
                pre = np.tensordot(freqs, w.value.T, axes=1) + b.value
                intents = np.tanh(pre)
                cache["learned_intent"] = (freqs, intents)
            i_tilde, cache["intent"] = nn.lstm_forward(self.intent_lstm, intents)

        if c.uses_md:
            parts.append(mapped)
        if c.uses_session:
            parts.append(h_s)
        if c.uses_intent:
            parts.append(i_tilde)
        x = np.concatenate(parts, axis=1)

        signal = None
        if c.predictor_kind in ("dynamic", "generated"):
            sig_parts = []
            if c.adjust_signal & {"M", "D"}:
                sig_parts.append(mapped)
            if "S" in c.adjust_signal:
                sig_parts.append(h_s)
            if "I" in c.adjust_signal:
                sig_parts.append(i_tilde)
            signal = np.concatenate(sig_parts, axis=1)

        layer_caches = []
        relu_masks = []
        h = x
        if c.predictor_kind == "dynamic":
            att_caches = []
            atts = []
            for meta in self.metas:
                a, mc = nn.meta_attention(meta, signal)
                atts.append(a)
                att_caches.append(mc)
            cache["att"] = (atts, att_caches)
            for i, layer in enumerate(self.fcd_layers):
                a = atts[i] if c.per_layer_attention else atts[0]
                h, lc = nn.fcd_forward(layer, a, h)
                layer_caches.append(lc)
                if i < len(self.fcd_layers) - 1:
                    mask = h > 0.0
                    relu_masks.append(mask)
                    h = h * mask
        elif c.predictor_kind == "static":
            for i, (w, b) in enumerate(self.dense_layers):
                h, lc = nn.dense_forward(w, b, h)
                layer_caches.append(lc)
                if i < len(self.dense_layers) - 1:
                    mask = h > 0.0
                    relu_masks.append(mask)
                    h = h * mask
        else:
            for i, layer in enumerate(self.gen_layers):
                h, lc = nn.fcd_generate_forward(layer, signal, h)
                layer_caches.append(lc)
                if i < len(self.gen_layers) - 1:
                    mask = h > 0.0
                    relu_masks.append(mask)
                    h = h * mask

        cache["layers"] = layer_caches
        cache["relu_masks"] = relu_masks
        cache["x_parts"] = [p.shape[1] for p in parts]
        return h, cache

    # -- backward -----------------------------------------------------------

    def backward(self, cache: dict, grad_logits: np.ndarray) -> None:
        """Accumulate gradients for every reachable param."""
        c = self.config
        layer_caches = cache["layers"]
        relu_masks = cache["relu_masks"]

        grad_signal = None
        g = grad_logits
        if c.predictor_kind == "dynamic":
            atts, att_caches = cache["att"]
            grad_atts = [np.zeros_like(a) for a in atts]
            for i in range(len(self.fcd_layers) - 1, -1, -1):
                if i < len(self.fcd_layers) - 1:
                    g = g * relu_masks[i]
                ga, g = nn.fcd_backward(layer_caches[i], g)
                grad_atts[i if c.per_layer_attention else 0] += ga
            grad_signal = 0.0
            for mc, ga in zip(att_caches, grad_atts):
                grad_signal = grad_signal + nn.meta_attention_backward(mc, ga)
        elif c.predictor_kind == "static":
            for i in range(len(self.dense_layers) - 1, -1, -1):
                if i < len(self.dense_layers) - 1:
                    g = g * relu_masks[i]
                g = nn.dense_backward(layer_caches[i], g)
        else:
            grad_signal = 0.0
            for i in range(len(self.gen_layers) - 1, -1, -1):
                if i < len(self.gen_layers) - 1:
                    g = g * relu_masks[i]
                gs, g = nn.fcd_generate_backward(layer_caches[i], g)
                grad_signal = grad_signal + gs

        # split the predictor-input gradient back into component gradients
        grad_mapped = grad_h_s = grad_i_tilde = None
        offset = 0
        if c.uses_md:
            grad_mapped = g[:, offset : offset + c.mapped_dim]
            offset += c.mapped_dim
        if c.uses_session:
            grad_h_s = g[:, offset : offset + c.session_lstm_hidden]
            offset += c.session_lstm_hidden
        if c.uses_intent:
            grad_i_tilde = g[:, offset : offset + c.intent_lstm_hidden]
            offset += c.intent_lstm_hidden

        # the adjust signal feeds the same representations
        if grad_signal is not None and not np.isscalar(grad_signal):
            offset = 0
            if c.adjust_signal & {"M", "D"}:
                part = grad_signal[:, offset : offset + c.mapped_dim]
                grad_mapped = part if grad_mapped is None else grad_mapped + part
                offset += c.mapped_dim
            if "S" in c.adjust_signal:
                part = grad_signal[:, offset : offset + c.session_lstm_hidden]
                grad_h_s = part if grad_h_s is None else grad_h_s + part
                offset += c.session_lstm_hidden
            if "I" in c.adjust_signal:
                part = grad_signal[:, offset : offset + c.intent_lstm_hidden]
                grad_i_tilde = part if grad_i_tilde is None else grad_i_tilde + part
                offset += c.intent_lstm_hidden

        if grad_i_tilde is not None:
            grad_intents = nn.lstm_backward(cache["intent"], grad_i_tilde)
            if c.intent_method == "learned":
                freqs, intents = cache["learned_intent"]
                w, b = self.learned_intent
                dpre = grad_intents * (1.0 - intents * intents)
                w.grad += np.einsum("tbk,tbf->kf", dpre, freqs)
                b.grad += dpre.sum(axis=(0, 1))
        if grad_h_s is not None:
            nn.lstm_backward(cache["sess"], grad_h_s)
        if grad_mapped is not None:
            nn.dense_backward(cache["md"], grad_mapped)

    # -- losses and inference -----------------------------------------------

    def loss_and_backward(self, batch: Batch) -> tuple[float, float]:
        """Cross entropy plus the orthogonality term; fills all grads.

        Returns ``(classification_loss, regularizer_value)``; gradients for
        the total ``L_C + beta * L_R`` are accumulated into the params.
        """
        logits, cache = self.forward(batch)
        l_c, grad_logits = nn.cross_entropy(logits, batch.labels)
        self.backward(cache, grad_logits)
        l_r = 0.0
        if self.fcd_layers:
            l_r, reg_grads = nn.ortho_reg(self.fcd_layers)
            if self.config.beta != 0.0:
                for layer, g in zip(self.fcd_layers, reg_grads):
                    layer.basis_w.grad += self.config.beta * g
        return l_c, l_r

    def predict_proba(self, batch: Batch) -> np.ndarray:
        logits, _ = self.forward(batch)
        return nn.softmax(logits)

    # -- checkpointing --------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "format": {"reshape": RESHAPE_CONVENTION},
            "config": self.config.to_json_dict(),
            "params": {
                name: {"shape": list(p.value.shape), "data": p.value.reshape(-1).tolist()}
                for name, p in self._params.items()
            },
        }

    def load_state_dict(self, state: dict) -> None:
        saved = state.get("params", {})
        if set(saved) != set(self._params):
            missing = set(self._params) - set(saved)
            extra = set(saved) - set(self._params)
            raise CompatibilityError(
                f"param set mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}"
            )
        for name, p in self._params.items():
            entry = saved[name]
            shape = tuple(entry["shape"])
            if shape != p.value.shape:
                raise CompatibilityError(
                    f"shape mismatch for {name}: checkpoint {shape}, model {p.value.shape}"
                )
            p.value[...] = np.asarray(entry["data"], dtype=np.float64).reshape(shape)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.state_dict(), fh, separators=(",", ":"))

    def copy_values(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self._params.items()}

    def set_values(self, values: dict[str, np.ndarray]) -> None:
        for name, v in values.items():
            self._params[name].value[...] = v


def load_model(path) -> DigmnModel:
    with open(path, "r", encoding="utf-8") as fh:
        state = json.load(fh)
    if state.get("format", {}).get("reshape") != RESHAPE_CONVENTION:
        raise CompatibilityError(
            f"unknown reshape convention {state.get('format')!r}; "
            f"expected {RESHAPE_CONVENTION!r}"
        )
    config = DigmnConfig.from_json_dict(state["config"])
    model = DigmnModel(config)
    model.load_state_dict(state)
    return model
