"""Toy dual encoder: frozen text and image transformers with a cosine-similarity head.

Each block is pre-norm single-head self-attention followed by a two-layer GELU MLP,
both residual. All weights are frozen; the backward passes return gradients with
respect to the input prompt tokens only.

Text path:  [prompt tokens; class embedding] -> M blocks -> proj(class-token state)
Image path: [image prompt tokens?; class token; patches] -> N blocks -> class-token state
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, RangeError, ShapeError

LN_EPS = 1e-5
_GELU_C = np.sqrt(2.0 / np.pi)


def _ro(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


def _gelu(z):
    t = np.tanh(_GELU_C * (z + 0.044715 * z**3))
    return 0.5 * z * (1.0 + t), t


def _gelu_grad(z, t):
    return 0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * z * z)


def _layer_norm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def _layer_norm_back(gy, g, cache):
    xhat, inv = cache
    gx = gy * g
    return inv * (gx - gx.mean(-1, keepdims=True) - xhat * (gx * xhat).mean(-1, keepdims=True))


def _softmax(s):
    e = np.exp(s - s.max(-1, keepdims=True))
    return e / e.sum(-1, keepdims=True)


@dataclass(frozen=True)
class Block:
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def init(cls, d, rng, attn_scale=1.0, value_gain=1.0, mlp_scale=0.5):
        """Near-identity value path, random query/key maps scaled by ``attn_scale``, small random MLP."""
        hidden = 2 * d
        eye = np.eye(d)
        noise = lambda *shape: rng.normal(0.0, 1.0 / np.sqrt(shape[0]), size=shape)
        return cls(
            ln1_g=_ro(np.ones(d)), ln1_b=_ro(np.zeros(d)),
            wq=_ro(attn_scale * noise(d, d)), wk=_ro(attn_scale * noise(d, d)),
            wv=_ro(eye + 0.3 * noise(d, d)), wo=_ro(value_gain * (eye + 0.3 * noise(d, d))),
            ln2_g=_ro(np.ones(d)), ln2_b=_ro(np.zeros(d)),
            w1=_ro(noise(d, hidden)), b1=_ro(0.1 * rng.normal(size=hidden)),
            w2=_ro(mlp_scale * noise(hidden, d)), b2=_ro(np.zeros(d)),
        )

    def forward(self, x):
        d = x.shape[-1]
        h, ln1 = _layer_norm(x, self.ln1_g, self.ln1_b)
        q, k, v = h @ self.wq, h @ self.wk, h @ self.wv
        a = _softmax(q @ np.swapaxes(k, -1, -2) / np.sqrt(d))
        o = a @ v
        x1 = x + o @ self.wo
        h2, ln2 = _layer_norm(x1, self.ln2_g, self.ln2_b)
        z = h2 @ self.w1 + self.b1
        gz, t = _gelu(z)
        out = x1 + gz @ self.w2 + self.b2
        return out, (ln1, h, q, k, v, a, o, ln2, h2, z, t)

    def backward(self, gout, cache):
        ln1, h, q, k, v, a, o, ln2, h2, z, t = cache
        d = gout.shape[-1]
        gx1 = gout + _layer_norm_back(((gout @ self.w2.T) * _gelu_grad(z, t)) @ self.w1.T,
                                      self.ln2_g, ln2)
        go = gx1 @ self.wo.T
        ga = go @ np.swapaxes(v, -1, -2)
        gv = np.swapaxes(a, -1, -2) @ go
        gs = a * (ga - (ga * a).sum(-1, keepdims=True)) / np.sqrt(d)
        gq = gs @ k
        gk = np.swapaxes(gs, -1, -2) @ q
        gh = gq @ self.wq.T + gk @ self.wk.T + gv @ self.wv.T
        return gx1 + _layer_norm_back(gh, self.ln1_g, ln1)

    def arrays(self):
        return [getattr(self, f) for f in self.__dataclass_fields__]


def _run_encoder(blocks, prefix_prompts, rest):
    """Forward ``[prompt; rest]`` through ``blocks``, substituting prompts at the first layers.

    ``prefix_prompts[j]`` replaces the prompt-token states entering layer ``j+1``; it
    may be empty (n = 0). ``rest`` has shape (B, T, d).
    """
    batch = rest.shape[0]
    n = prefix_prompts[0].shape[0]
    x = np.concatenate([np.broadcast_to(prefix_prompts[0], (batch, n, rest.shape[2])), rest], axis=1)
    caches = []
    for layer, block in enumerate(blocks):
        if 0 < layer < len(prefix_prompts):
            x = x.copy()
            x[:, :n] = prefix_prompts[layer]
        x, cache = block.forward(x)
        caches.append(cache)
    return x, (caches, n, len(prefix_prompts))


def _run_encoder_back(blocks, gx, enc_cache):
    caches, n, depth = enc_cache
    grads = [None] * depth
    for layer in range(len(blocks) - 1, -1, -1):
        gx = blocks[layer].backward(gx, caches[layer])
        if layer < depth:
            grads[layer] = gx[:, :n].sum(axis=0)
            if layer > 0:
                gx = gx.copy()
                gx[:, :n] = 0.0
    return grads


@dataclass
class Logits:
    scores: np.ndarray

    @property
    def probs(self) -> np.ndarray:
        return _softmax(self.scores)

    def argmax(self) -> int:
        # np.argmax returns the first maximal index
        return int(np.argmax(self.scores))


@dataclass
class ToyDualEncoder:
    text_blocks: tuple
    vis_blocks: tuple
    proj: np.ndarray
    vis_class_token: np.ndarray
    tau: float = 0.07
    prompt_depth: int = 1
    class_embeddings: np.ndarray | None = None
    deep_prompts: tuple = field(default=(), repr=False)

    def __post_init__(self):
        if self.tau <= 0:
            raise RangeError(f"tau must be positive, got {self.tau}")
        if not 1 <= self.prompt_depth <= max(self.m_layers, self.n_layers):
            raise RangeError(
                f"prompt_depth {self.prompt_depth} exceeds encoder depth {max(self.m_layers, self.n_layers)}"
            )

    @property
    def m_layers(self) -> int:
        return len(self.text_blocks)

    @property
    def n_layers(self) -> int:
        return len(self.vis_blocks)

    @property
    def d_text(self) -> int:
        return self.proj.shape[0]

    @property
    def d_vis(self) -> int:
        return self.proj.shape[1]

    def with_classes(self, class_embeddings) -> "ToyDualEncoder":
        emb = _ro(class_embeddings)
        if emb.ndim != 2 or emb.shape[1] != self.d_text:
            raise ShapeError(f"class embeddings must be C x {self.d_text}, got {emb.shape}")
        return ToyDualEncoder(self.text_blocks, self.vis_blocks, self.proj, self.vis_class_token,
                              self.tau, self.prompt_depth, emb, self.deep_prompts)

    def weights_hash(self) -> str:
        h = hashlib.sha256()
        for block in self.text_blocks + self.vis_blocks:
            for a in block.arrays():
                h.update(np.ascontiguousarray(a).tobytes())
        h.update(self.proj.tobytes())
        h.update(self.vis_class_token.tobytes())
        return h.hexdigest()

    # batched paths used by training; prompts is a list of per-layer matrices

    def text_features(self, prompts, class_ids=None):
        if self.class_embeddings is None:
            raise ShapeError("model has no class embeddings attached")
        prompts = [np.asarray(p, dtype=np.float64) for p in prompts]
        for p in prompts:
            if p.ndim != 2 or p.shape[1] != self.d_text or p.shape[0] != prompts[0].shape[0]:
                raise ShapeError(f"text prompts must all be n x {self.d_text}, got {p.shape}")
        if len(prompts) > self.m_layers:
            raise ShapeError(f"{len(prompts)} prompt layers for a {self.m_layers}-layer text encoder")
        emb = self.class_embeddings if class_ids is None else self.class_embeddings[np.asarray(class_ids)]
        x, enc = _run_encoder(self.text_blocks, prompts, emb[:, None, :])
        return x[:, -1] @ self.proj, enc

    def text_backward(self, grad_features, cache):
        caches, n, depth = cache
        gx = np.zeros((grad_features.shape[0], n + 1, self.d_text))
        gx[:, -1] = grad_features @ self.proj.T
        return _run_encoder_back(self.text_blocks, gx, cache)

    def image_features(self, patches, prompts=None):
        patches = np.asarray(patches, dtype=np.float64)
        if patches.ndim == 2:
            patches = patches[None]
        if patches.ndim != 3 or patches.shape[2] != self.d_vis:
            raise ShapeError(f"patches must be (B,) p x {self.d_vis}, got {patches.shape}")
        if prompts is None:
            prompts = [np.zeros((0, self.d_vis))]
        prompts = [np.asarray(p, dtype=np.float64) for p in prompts]
        for p in prompts:
            if p.ndim != 2 or p.shape[1] != self.d_vis or p.shape[0] != prompts[0].shape[0]:
                raise ShapeError(f"image prompts must all be n_v x {self.d_vis}, got {p.shape}")
        cls = np.broadcast_to(self.vis_class_token, (patches.shape[0], 1, self.d_vis))
        x, enc = _run_encoder(self.vis_blocks, prompts, np.concatenate([cls, patches], axis=1))
        return x[:, prompts[0].shape[0]], enc

    def image_backward(self, grad_features, cache):
        caches, n, depth = cache
        t = caches[0][1].shape[1]
        gx = np.zeros((grad_features.shape[0], t, self.d_vis))
        gx[:, n] = grad_features
        return _run_encoder_back(self.vis_blocks, gx, cache)


def build_model(seed=0, d_text=64, d_vis=64, m_layers=2, n_layers=2, tau=0.07,
                prompt_depth=1, attn_scale=2.0, value_gain=1.0) -> ToyDualEncoder:
    """A seeded frozen dual encoder.

    Stands in for a pre-trained one: value paths are near-identity so token content
    survives, and the projection is a perturbed embedding of text space into visual
    space, which gives the class-token features a rough cross-modal alignment.
    """
    rng = np.random.default_rng(seed)
    text = tuple(Block.init(d_text, rng, attn_scale, value_gain) for _ in range(m_layers))
    vis = tuple(Block.init(d_vis, rng, attn_scale, value_gain) for _ in range(n_layers))
    proj = np.eye(d_text, d_vis) + 0.1 * rng.normal(size=(d_text, d_vis)) / np.sqrt(d_text)
    cls = 0.1 * rng.normal(size=d_vis)
    return ToyDualEncoder(text, vis, _ro(proj), _ro(cls), tau, prompt_depth)


def forward_text(model: ToyDualEncoder, prompt, class_id: int) -> np.ndarray:
    """Text feature of one class. Stored deep prompts replace layers 2..depth."""
    prompt = np.asarray(prompt, dtype=np.float64)
    if prompt.ndim != 2 or prompt.shape[1] != model.d_text:
        raise ShapeError(f"prompt must be n x {model.d_text}, got {prompt.shape}")
    prompts = [prompt] + list(model.deep_prompts[1:])
    feats, _ = model.text_features(prompts, [class_id])
    return feats[0]


def forward_image(model: ToyDualEncoder, patches, image_prompt=None) -> np.ndarray:
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim != 2:
        raise ShapeError(f"patches must be p x {model.d_vis}, got {patches.shape}")
    prompts = None if image_prompt is None else [image_prompt]
    feats, _ = model.image_features(patches[None], prompts)
    return feats[0]


def set_deep_prompts(model: ToyDualEncoder, per_layer_prompts) -> None:
    """Store prompts that replace the incoming prompt states of layers 1..prompt_depth.

    Slot 0 is the layer-1 prompt; forward_text takes that one per call.
    """
    prompts = tuple(_ro(p) for p in per_layer_prompts)
    if len(prompts) != model.prompt_depth:
        raise ShapeError(f"expected {model.prompt_depth} prompts, got {len(prompts)}")
    if prompts and len({p.shape for p in prompts}) != 1:
        raise ShapeError("all deep prompts must share one shape")
    if prompts and prompts[0].shape[1] != model.d_text:
        raise ShapeError(f"deep prompts must have width {model.d_text}")
    model.deep_prompts = prompts


def _unit(x, name):
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise DomainError(f"{name} has zero norm; cosine similarity is undefined")
    return x / norm, norm


def predict(image_feature, text_features, tau: float):
    """Cosine-similarity logits over classes and the predicted class (lowest index on ties)."""
    if tau <= 0:
        raise RangeError(f"tau must be positive, got {tau}")
    fv, _ = _unit(np.asarray(image_feature, dtype=np.float64), "image feature")
    fl, _ = _unit(np.atleast_2d(np.asarray(text_features, dtype=np.float64)), "text feature")
    logits = Logits(fl @ fv / tau)
    return logits, logits.argmax()


def cosine_logits(image_feats, text_feats, tau):
    """Batched scores (B, C) = cos(image_b, text_c) / tau, plus what the backward pass needs."""
    iv, inorm = _unit(image_feats, "image feature")
    tv, tnorm = _unit(text_feats, "text feature")
    return iv @ tv.T / tau, (iv, inorm, tv, tnorm, tau)


def cosine_logits_back(grad_scores, cache):
    iv, inorm, tv, tnorm, tau = cache
    g = grad_scores / tau
    g_iv = g @ tv
    g_tv = g.T @ iv
    g_image = (g_iv - iv * (g_iv * iv).sum(-1, keepdims=True)) / inorm
    g_text = (g_tv - tv * (g_tv * tv).sum(-1, keepdims=True)) / tnorm
    return g_image, g_text
