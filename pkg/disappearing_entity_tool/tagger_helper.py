#!/usr/bin/env python
"""
Dual-stack recurrent CRF tagger for disappearing entities.

Stack A reads character-encoder features joined with base word vectors;
stack B reads the word vectors refined on the post's own day. The
concatenated hidden states give per-tag emissions for a masked CRF.
"""

import copy
import logging
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
from pydantic import BaseModel
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence, pad_sequence
from tqdm import tqdm

from .binary_io import decode_array, decode_json, encode_array, encode_json, read_sections, write_sections
from .bilou import TagSet, extract_spans
from .config import ERROR_MESSAGES
from .corpus_helper import derive_seed, make_rng
from .crf_helper import MaskedCRF, forward_score, viterbi
from .embedding_helper import EmbeddingModel, lookup
from .errors import ArgumentError, TrainingDivergedError
from .evaluation_helper import conll_score
from .models import TAGGED_TYPES, Dataset, DetectedSpan, LabeledSentence, Post, TaggerConfig

# Configure logging
logger = logging.getLogger('det_tagger')

MAGIC = b"FADER01"
PAD_CHAR = 0
UNKNOWN_CHAR = 1

RefinedLookup = Callable[[date], Optional[EmbeddingModel]]
Taggable = Union[LabeledSentence, Post]


# -------------------------------------------------------------------------
# Features
# -------------------------------------------------------------------------

@dataclass(frozen=True)
class SentenceFeatures:
    tokens: Tuple[str, ...]
    chars: Tuple[Tuple[int, ...], ...]
    word_a: np.ndarray
    word_b: np.ndarray
    fallback: bool = False

    def __len__(self) -> int:
        return len(self.tokens)


def day_of(item: Taggable) -> date:
    return item.day if isinstance(item, Post) else item.date


def encode_chars(token: str, char_index: Dict[str, int]) -> Tuple[int, ...]:
    return tuple(char_index.get(c, UNKNOWN_CHAR) for c in token) or (UNKNOWN_CHAR,)


def build_features(
    sentence: Taggable,
    base: EmbeddingModel,
    refined: Optional[EmbeddingModel],
    char_index: Dict[str, int],
    use_refined: bool = True,
    cache: Optional[Dict[Tuple[str, str], np.ndarray]] = None,
) -> SentenceFeatures:
    """Stack A gets base vectors (char features are added in the network);
    stack B gets vectors from ``refined``, or from ``base`` when no model
    exists for the day, in which case the sentence is flagged.
    """
    cache = {} if cache is None else cache

    def vector(model: EmbeddingModel, token: str) -> np.ndarray:
        key = (model.tag, token)
        if key not in cache:
            cache[key] = lookup(model, token)
        return cache[key]

    tokens = tuple(sentence.tokens)
    word_a = np.stack([vector(base, t) for t in tokens]).astype(np.float32)
    fallback = use_refined and refined is None
    if not use_refined:
        word_b = np.zeros_like(word_a)
    else:
        source = refined if refined is not None else base
        word_b = np.stack([vector(source, t) for t in tokens]).astype(np.float32)
    chars = tuple(encode_chars(t, char_index) for t in tokens)
    return SentenceFeatures(tokens, chars, word_a, word_b, fallback)


def featurize(
    sentences: Sequence[Taggable],
    base: EmbeddingModel,
    refined: Optional[RefinedLookup],
    char_index: Dict[str, int],
    use_refined: bool = True,
) -> List[SentenceFeatures]:
    cache: Dict[Tuple[str, str], np.ndarray] = {}
    features = []
    for sentence in sentences:
        model = refined(day_of(sentence)) if (use_refined and refined is not None) else None
        features.append(build_features(sentence, base, model, char_index, use_refined, cache))
    fallbacks = sum(f.fallback for f in features)
    if fallbacks:
        logger.info(f"{fallbacks} of {len(features)} sentences used base vectors for stack B (no refined model)")
    return features


# -------------------------------------------------------------------------
# Network
# -------------------------------------------------------------------------

class CharEncoder(nn.Module):
    """Bidirectional GRU over characters; a token is its two final states."""

    def __init__(self, n_chars: int, char_emb: int, char_hidden: int):
        super().__init__()
        self.embedding = nn.Embedding(n_chars, char_emb, padding_idx=PAD_CHAR)
        self.rnn = nn.GRU(char_emb, char_hidden, batch_first=True, bidirectional=True)
        self.output_dim = 2 * char_hidden

    def forward(self, char_ids: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        packed = pack_padded_sequence(self.embedding(char_ids), lengths, batch_first=True, enforce_sorted=False)
        _, hidden = self.rnn(packed)
        return torch.cat([hidden[0], hidden[1]], dim=1)


class TaggerModel(nn.Module):
    def __init__(
        self,
        tagset: TagSet,
        word_dim: int,
        chars: Sequence[str],
        config: TaggerConfig,
        char_encoder: Optional[CharEncoder] = None,
    ):
        super().__init__()
        self.tagset = tagset
        self.word_dim = word_dim
        self.chars = list(chars)
        self.char_index = {c: i + 2 for i, c in enumerate(self.chars)}
        self.config = config
        self.char_encoder = char_encoder or CharEncoder(len(self.chars) + 2, config.char_emb, config.char_hidden)
        self.stack_a = nn.GRU(self.char_encoder.output_dim + word_dim, config.word_hidden, batch_first=True, bidirectional=True)
        self.stack_b = nn.GRU(word_dim, config.word_hidden, batch_first=True, bidirectional=True)
        self.dropout = nn.Dropout(config.dropout)
        self.emission = nn.Linear(4 * config.word_hidden, len(tagset))
        self.crf = MaskedCRF(tagset)

    @property
    def dtype(self) -> torch.dtype:
        return self.emission.weight.dtype

    def _run(self, rnn: nn.GRU, inputs: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        packed = pack_padded_sequence(inputs, lengths, batch_first=True, enforce_sorted=False)
        output, _ = rnn(packed)
        output, _ = pad_packed_sequence(output, batch_first=True, total_length=inputs.shape[1])
        return output

    def forward(self, batch: Sequence[SentenceFeatures]) -> Tuple[torch.Tensor, torch.Tensor]:
        """Emission scores (batch, time, tags) and sentence lengths."""
        lengths = torch.as_tensor([len(f) for f in batch], dtype=torch.long)
        token_chars = [torch.as_tensor(c, dtype=torch.long) for f in batch for c in f.chars]
        char_lengths = torch.as_tensor([len(c) for c in token_chars], dtype=torch.long)
        char_states = self.char_encoder(pad_sequence(token_chars, batch_first=True, padding_value=PAD_CHAR), char_lengths)
        char_states = pad_sequence(list(torch.split(char_states, lengths.tolist())), batch_first=True)

        word_a = pad_sequence([torch.as_tensor(f.word_a, dtype=self.dtype) for f in batch], batch_first=True)
        word_b = pad_sequence([torch.as_tensor(f.word_b, dtype=self.dtype) for f in batch], batch_first=True)
        inputs_a = torch.cat([char_states, word_a], dim=2)
        if self.config.dropout_on in ("embeddings", "both"):
            inputs_a = self.dropout(inputs_a)
            word_b = self.dropout(word_b)

        hidden_a = self._run(self.stack_a, inputs_a, lengths)
        if self.config.use_refined:
            hidden_b = self._run(self.stack_b, word_b, lengths)
        else:
            hidden_b = torch.zeros_like(hidden_a)
        hidden = torch.cat([hidden_a, hidden_b], dim=2)
        if self.config.dropout_on in ("recurrent", "both"):
            hidden = self.dropout(hidden)
        return self.emission(hidden), lengths

    def loss(self, batch: Sequence[SentenceFeatures], gold: Sequence[Sequence[int]]) -> torch.Tensor:
        emissions, lengths = self(batch)
        tags = pad_sequence([torch.as_tensor(g, dtype=torch.long) for g in gold], batch_first=True)
        return self.crf.nll(emissions, tags, lengths)


def crf_forward(model: TaggerModel, features: SentenceFeatures) -> float:
    """Log-partition of one sentence, computed exactly in float64."""
    model.eval()
    with torch.no_grad():
        emissions, _ = model([features])
    return forward_score(emissions[0].double().numpy(), *model.crf.numpy_weights())


def crf_loss(model: TaggerModel, features: SentenceFeatures, gold: Sequence[str]) -> torch.Tensor:
    """Negative log-likelihood of ``gold``; call ``.backward()`` for gradients."""
    return model.loss([features], [model.tagset.encode(gold)])[0]


def viterbi_decode(model: TaggerModel, features: SentenceFeatures) -> Tuple[List[str], float]:
    return decode_batch(model, [features])[0]


def decode_batch(model: TaggerModel, batch: Sequence[SentenceFeatures]) -> List[Tuple[List[str], float]]:
    model.eval()
    with torch.no_grad():
        emissions, lengths = model(batch)
    weights = model.crf.numpy_weights()
    emissions = emissions.double().numpy()
    decoded = []
    for row, length in zip(emissions, lengths.tolist()):
        path, score = viterbi(row[:length], *weights)
        decoded.append((model.tagset.decode(path), score))
    return decoded


# -------------------------------------------------------------------------
# Training
# -------------------------------------------------------------------------

class EpochRecord(BaseModel):
    epoch: int
    loss: float
    dev_f1: float
    lr: float


class TrainingLog(BaseModel):
    epochs: List[EpochRecord] = []
    best_epoch: int = 0
    best_dev_f1: float = 0.0
    use_refined: bool = True
    fallback_sentences: int = 0


def best_epoch(dev_f1: Sequence[float]) -> int:
    """1-based epoch with the highest dev F1; the earliest wins ties."""
    return int(np.argmax(dev_f1)) + 1


def parameter_norm(model: nn.Module) -> float:
    with torch.no_grad():
        return float(torch.sqrt(sum((p.double() ** 2).sum() for p in model.parameters())))


def _predict_features(model: TaggerModel, features: Sequence[SentenceFeatures], batch: int) -> List[Tuple[List[str], float]]:
    decoded: List[Tuple[List[str], float]] = []
    for start in range(0, len(features), batch):
        decoded.extend(decode_batch(model, features[start:start + batch]))
    return decoded


def train(
    dataset: Dataset,
    base: EmbeddingModel,
    refined: Optional[RefinedLookup],
    cfg: TaggerConfig,
    use_refined: Optional[bool] = None,
    char_encoder: Optional[CharEncoder] = None,
    threads: int = 1,
    show_progress: bool = False,
) -> Tuple[TaggerModel, TrainingLog]:
    """Mini-batch SGD on the CRF likelihood, keeping the best dev-F1 snapshot.

    ``use_refined=False`` trains the ablation whose stack B contributes
    nothing. The learning rate halves after ``lr_patience`` epochs without a
    dev improvement, never going below ``lr_floor``.
    """
    if not dataset.train or not dataset.dev:
        raise ArgumentError(ERROR_MESSAGES['no_training_data'])
    if use_refined is not None:
        cfg = cfg.model_copy(update={"use_refined": use_refined})
    torch.set_num_threads(threads)
    torch.manual_seed(cfg.seed)

    tagset = TagSet(TAGGED_TYPES)
    chars = sorted({c for s in dataset.train for token in s.tokens for c in token})
    model = TaggerModel(tagset, base.dim, chars, cfg, char_encoder)
    train_features = featurize(dataset.train, base, refined, model.char_index, cfg.use_refined)
    dev_features = featurize(dataset.dev, base, refined, model.char_index, cfg.use_refined)
    gold = [tagset.encode(s.tags) for s in dataset.train]

    optimizer = torch.optim.SGD(model.parameters(), lr=cfg.lr)
    rng = make_rng(derive_seed(cfg.seed, "batches"))
    log = TrainingLog(
        use_refined=cfg.use_refined,
        fallback_sentences=sum(f.fallback for f in train_features + dev_features),
    )
    best_state, best_f1, stale, lr = None, -1.0, 0, cfg.lr

    for epoch in tqdm(range(1, cfg.max_epochs + 1), desc="tagger epochs", disable=not show_progress):
        model.train()
        order = rng.permutation(len(train_features))
        total = 0.0
        for batch_no, start in enumerate(range(0, len(order), cfg.batch), 1):
            idx = order[start:start + cfg.batch]
            loss = model.loss([train_features[i] for i in idx], [gold[i] for i in idx]).mean()
            if not torch.isfinite(loss):
                raise TrainingDivergedError(epoch=epoch, batch=batch_no, norm=parameter_norm(model))
            optimizer.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(model.parameters(), cfg.clip)
            optimizer.step()
            total += float(loss) * len(idx)

        predicted = [tags for tags, _ in _predict_features(model, dev_features, max(cfg.batch, 64))]
        dev_f1 = conll_score(dataset.dev, predicted).micro.f1
        log.epochs.append(EpochRecord(epoch=epoch, loss=total / len(order), dev_f1=dev_f1, lr=lr))
        logger.info(f"Epoch {epoch}: loss {total / len(order):.4f}, dev F1 {dev_f1:.4f}, lr {lr:g}")

        if dev_f1 > best_f1:
            best_state, best_f1, stale = copy.deepcopy(model.state_dict()), dev_f1, 0
        else:
            stale += 1
            if stale >= cfg.lr_patience:
                lr, stale = max(cfg.lr_floor, lr / 2), 0
                for group in optimizer.param_groups:
                    group["lr"] = lr
        if dev_f1 >= 1.0:
            # Nothing later can beat a perfect dev score.
            break

    log.best_epoch = best_epoch([e.dev_f1 for e in log.epochs])
    log.best_dev_f1 = best_f1
    model.load_state_dict(best_state)
    model.eval()
    logger.info(f"Restored epoch {log.best_epoch} (dev F1 {best_f1:.4f})")
    return model, log


# -------------------------------------------------------------------------
# Inference
# -------------------------------------------------------------------------

def predict_tags(
    model: TaggerModel,
    sentences: Sequence[Taggable],
    base: EmbeddingModel,
    refined: Optional[RefinedLookup],
    batch: int = 64,
) -> List[Tuple[List[str], float]]:
    """Decoded tags and Viterbi scores, in input order."""
    features = featurize(sentences, base, refined, model.char_index, model.config.use_refined)
    return _predict_features(model, features, batch)


def spans_from_tags(post: Post, tags: Sequence[str], score: float) -> List[DetectedSpan]:
    return [
        DetectedSpan(
            start=start, end=end, surface=" ".join(post.tokens[start:end]),
            coarse_type=kind, date=post.day, score=score, post_id=post.id,
        )
        for start, end, kind in extract_spans(tags)
    ]


def tag_post(model: TaggerModel, post: Post, base: EmbeddingModel, refined: Optional[RefinedLookup]) -> List[DetectedSpan]:
    return tag_posts(model, [post], base, refined)[0]


def tag_posts(
    model: TaggerModel,
    posts: Sequence[Post],
    base: EmbeddingModel,
    refined: Optional[RefinedLookup],
    batch: int = 64,
) -> List[List[DetectedSpan]]:
    posts = list(posts)
    taggable = [p for p in posts if p.tokens]
    decoded = iter(predict_tags(model, taggable, base, refined, batch))
    results = []
    for post in posts:
        if not post.tokens:
            results.append([])
            continue
        tags, score = next(decoded)
        results.append(spans_from_tags(post, tags, score))
    return results


# -------------------------------------------------------------------------
# Checkpoints
# -------------------------------------------------------------------------

def save_checkpoint(model: TaggerModel, path: Path) -> None:
    """Write the model; the same parameters always produce the same bytes."""
    meta = {
        "config": model.config.model_dump(),
        "word_dim": model.word_dim,
        "chars": model.chars,
        "char_emb": model.char_encoder.embedding.embedding_dim,
        "char_hidden": model.char_encoder.output_dim // 2,
    }
    sections = [("tagset", encode_json(model.tagset.types)), ("config", encode_json(meta))]
    for name, param in model.named_parameters():
        sections.append((f"param:{name}", encode_array(param.detach().cpu().float().numpy())))
    write_sections(path, MAGIC, sections)


def load_checkpoint(path: Path) -> TaggerModel:
    sections = read_sections(path, MAGIC)
    meta = decode_json(sections["config"])
    config = TaggerConfig(**meta["config"])
    encoder = CharEncoder(len(meta["chars"]) + 2, meta["char_emb"], meta["char_hidden"])
    model = TaggerModel(TagSet(decode_json(sections["tagset"])), meta["word_dim"], meta["chars"], config, encoder)
    state = {
        name[len("param:"):]: torch.from_numpy(decode_array(payload))
        for name, payload in sections.items() if name.startswith("param:")
    }
    model.load_state_dict(state)
    model.eval()
    return model
