"""Corpus ingestion: a uniform document model, dataset adapters, vocabularies,
role co-occurrence counts and a deterministic synthetic benchmark generator.

The uniform record is one JSON object per line:

    {"doc_id": str, "words": [str], "sent_starts": [int],
     "events": [{"type": str, "trigger": [start, end], "roles": [str],
                 "args": [{"role": str, "span": [start, end], "head": int?}]}]}

Spans are inclusive word indices. Adapters map the two public datasets'
native layouts into this schema; the synthetic generator emits it directly.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ValidationError

log = logging.getLogger(__name__)

FORMATS = ("uniform", "synthetic", "rams-like", "wikievents-like")


@dataclass(frozen=True)
class Document:
    doc_id: str
    words: tuple[str, ...]
    sentence_starts: tuple[int, ...]

    def __post_init__(self):
        n = len(self.words)
        if n < 1:
            raise ValidationError(f"{self.doc_id}: document has no words")
        starts = self.sentence_starts
        if not starts or starts[0] != 0:
            raise ValidationError(f"{self.doc_id}: sentence starts must begin at 0")
        if list(starts) != sorted(set(starts)) or starts[-1] >= n + 1 or any(s > n for s in starts):
            raise ValidationError(f"{self.doc_id}: sentence starts not sorted within [0, {n}]")

    @property
    def n_words(self) -> int:
        return len(self.words)

    def sentence_of(self, word_index: int) -> int:
        """Index of the sentence containing a word."""
        s = 0
        for k, start in enumerate(self.sentence_starts):
            if start <= word_index:
                s = k
        return s


@dataclass(frozen=True)
class EventFrame:
    doc_id: str
    event_index: int
    event_type: str
    trigger: tuple[int, int]
    roles: tuple[str, ...]
    gold_args: tuple[tuple[str, tuple[int, int]], ...]
    gold_heads: tuple[tuple[tuple[int, int], int], ...] | None = None

    def validate(self, doc: Document) -> None:
        n = doc.n_words
        a, b = self.trigger
        if not (0 <= a <= b < n):
            raise ValidationError(f"{self.doc_id}: trigger {self.trigger} outside document of {n} words")
        role_set = set(self.roles)
        for role, (s, e) in self.gold_args:
            if not (0 <= s <= e < n):
                raise ValidationError(f"{self.doc_id}: argument span ({s}, {e}) outside document of {n} words")
            if role not in role_set:
                raise ValidationError(f"{self.doc_id}: argument role {role!r} not in event roles {sorted(role_set)}")

    def head_of(self, span: tuple[int, int]) -> int | None:
        if self.gold_heads is None:
            return None
        for sp, h in self.gold_heads:
            if sp == span:
                return h
        return None


@dataclass
class CooccurrenceMatrix:
    roles: tuple[str, ...]
    counts: np.ndarray

    def validate(self) -> None:
        c = self.counts
        if c.shape != (len(self.roles), len(self.roles)):
            raise ValidationError("co-occurrence matrix shape does not match role list")
        if not np.array_equal(c, c.T):
            raise ValidationError("co-occurrence matrix is not symmetric")
        if np.any(np.diag(c) != 0):
            raise ValidationError("co-occurrence diagonal must be zero")


# ---------------------------------------------------------------------------
# uniform records
# ---------------------------------------------------------------------------


def _frame_from_record(doc_id: str, idx: int, ev: dict) -> EventFrame:
    heads = []
    args = []
    for a in ev.get("args", []):
        span = (int(a["span"][0]), int(a["span"][1]))
        args.append((str(a["role"]), span))
        if "head" in a and a["head"] is not None:
            heads.append((span, int(a["head"])))
    return EventFrame(
        doc_id=doc_id,
        event_index=idx,
        event_type=str(ev["type"]),
        trigger=(int(ev["trigger"][0]), int(ev["trigger"][1])),
        roles=tuple(str(r) for r in ev["roles"]),
        gold_args=tuple(args),
        gold_heads=tuple(heads) if heads else None,
    )


def _load_uniform(path: Path) -> tuple[list[Document], list[EventFrame]]:
    docs: list[Document] = []
    frames: list[EventFrame] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                doc = Document(
                    doc_id=str(rec["doc_id"]),
                    words=tuple(str(w) for w in rec["words"]),
                    sentence_starts=tuple(int(s) for s in rec.get("sent_starts", [0])),
                )
                for idx, ev in enumerate(rec.get("events", [])):
                    frame = _frame_from_record(doc.doc_id, idx, ev)
                    frame.validate(doc)
                    frames.append(frame)
            except ValidationError:
                raise
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise ValidationError(f"{path}:{lineno}: malformed record: {exc}") from exc
            docs.append(doc)
    return docs, frames


def serialize_corpus(docs: list[Document], frames: list[EventFrame], path: str | Path) -> None:
    """Write the uniform line-delimited format; inverse of the uniform loader."""
    by_doc: dict[str, list[EventFrame]] = {}
    for f in sorted(frames, key=lambda f: (f.doc_id, f.event_index)):
        by_doc.setdefault(f.doc_id, []).append(f)
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            events = []
            for f in by_doc.get(doc.doc_id, []):
                heads = dict(f.gold_heads) if f.gold_heads else {}
                events.append({
                    "type": f.event_type,
                    "trigger": list(f.trigger),
                    "roles": list(f.roles),
                    "args": [
                        {"role": r, "span": list(sp), **({"head": heads[sp]} if sp in heads else {})}
                        for r, sp in f.gold_args
                    ],
                })
            rec = {"doc_id": doc.doc_id, "words": list(doc.words),
                   "sent_starts": list(doc.sentence_starts), "events": events}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# dataset adapters
# ---------------------------------------------------------------------------

_RAMS_ROLE = re.compile(r"arg\d\d(.+)$")


def _rams_role_name(raw: str) -> str:
    """Strip the positional prefix of role labels like ``evt089arg02victim``."""
    m = _RAMS_ROLE.search(raw)
    return m.group(1) if m else raw


def _load_rams_like(path: Path) -> tuple[list[Document], list[EventFrame]]:
    docs: list[Document] = []
    raw_events: list[tuple[str, int, str, tuple[int, int], list[tuple[str, tuple[int, int]]]]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                doc_id = str(rec["doc_key"])
                sentences = rec["sentences"]
                words: list[str] = []
                starts: list[int] = []
                for sent in sentences:
                    starts.append(len(words))
                    words.extend(str(w) for w in sent)
                doc = Document(doc_id, tuple(words), tuple(starts))
                links = rec.get("gold_evt_links", [])
                for idx, trig in enumerate(rec.get("evt_triggers", [])):
                    t_start, t_end, types = int(trig[0]), int(trig[1]), trig[2]
                    etype = str(types[0][0])
                    args = []
                    for link in links:
                        if (int(link[0][0]), int(link[0][1])) != (t_start, t_end):
                            continue
                        span = (int(link[1][0]), int(link[1][1]))
                        args.append((_rams_role_name(str(link[2])), span))
                    raw_events.append((doc_id, idx, etype, (t_start, t_end), args))
            except (KeyError, TypeError, ValueError, IndexError, json.JSONDecodeError) as exc:
                raise ValidationError(f"{path}:{lineno}: malformed record: {exc}") from exc
            docs.append(doc)

    # role inventory per event type is derived from the file itself
    type_roles: dict[str, set[str]] = {}
    for _, _, etype, _, args in raw_events:
        type_roles.setdefault(etype, set()).update(r for r, _ in args)

    doc_index = {d.doc_id: d for d in docs}
    frames = []
    for doc_id, idx, etype, trigger, args in raw_events:
        frame = EventFrame(doc_id, idx, etype, trigger,
                           tuple(sorted(type_roles.get(etype, set()))), tuple(args))
        frame.validate(doc_index[doc_id])
        frames.append(frame)
    return docs, frames


def _load_wikievents_like(path: Path) -> tuple[list[Document], list[EventFrame]]:
    docs: list[Document] = []
    raw_events = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                doc_id = str(rec["doc_id"])
                words = [str(t) for t in rec["tokens"]]
                starts = [0]
                if "sentences" in rec:
                    starts, pos = [], 0
                    for sent in rec["sentences"]:
                        starts.append(pos)
                        pos += len(sent[0]) if sent and isinstance(sent[0], list) else len(sent)
                doc = Document(doc_id, tuple(words), tuple(starts))
                entities = {str(e["id"]): (int(e["start"]), int(e["end"]) - 1)
                            for e in rec.get("entity_mentions", [])}
                for idx, ev in enumerate(rec.get("event_mentions", [])):
                    trig = ev["trigger"]
                    trigger = (int(trig["start"]), int(trig["end"]) - 1)
                    args = []
                    for a in ev.get("arguments", []):
                        if "start" in a:
                            span = (int(a["start"]), int(a["end"]) - 1)
                        else:
                            span = entities[str(a["entity_id"])]
                        args.append((str(a["role"]), span))
                    raw_events.append((doc_id, idx, str(ev["event_type"]), trigger, args))
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise ValidationError(f"{path}:{lineno}: malformed record: {exc}") from exc
            docs.append(doc)

    type_roles: dict[str, set[str]] = {}
    for _, _, etype, _, args in raw_events:
        type_roles.setdefault(etype, set()).update(r for r, _ in args)
    doc_index = {d.doc_id: d for d in docs}
    frames = []
    for doc_id, idx, etype, trigger, args in raw_events:
        frame = EventFrame(doc_id, idx, etype, trigger,
                           tuple(sorted(type_roles.get(etype, set()))), tuple(args))
        frame.validate(doc_index[doc_id])
        frames.append(frame)
    return docs, frames


def load_dataset(path: str | Path, format: str = "uniform") -> tuple[list[Document], list[EventFrame]]:
    """Load a dataset file into the uniform document model."""
    path = Path(path)
    if format not in FORMATS:
        raise ConfigError(f"unknown dataset format {format!r}; expected one of {FORMATS}")
    if not path.exists():
        raise ValidationError(f"dataset file not found: {path}")
    if format in ("uniform", "synthetic"):
        docs, frames = _load_uniform(path)
    elif format == "rams-like":
        docs, frames = _load_rams_like(path)
    else:
        docs, frames = _load_wikievents_like(path)
    if not docs:
        log.warning("dataset %s is empty", path)
    seen: set[str] = set()
    for d in docs:
        if d.doc_id in seen:
            raise ValidationError(f"{path}: duplicate doc_id {d.doc_id!r}")
        seen.add(d.doc_id)
    return docs, frames


def corpus_stats(docs: list[Document], frames: list[EventFrame]) -> dict:
    """Counts in the shape of the usual dataset statistics tables."""
    args = sum(len(f.gold_args) for f in frames)
    gold_lengths: dict[int, int] = {}
    for f in frames:
        for _, (s, e) in f.gold_args:
            gold_lengths[e - s + 1] = gold_lengths.get(e - s + 1, 0) + 1
    return {
        "documents": len(docs),
        "events": len(frames),
        "arguments": args,
        "event_types": len({f.event_type for f in frames}),
        "role_types": len({r for f in frames for r, _ in f.gold_args}),
        "gold_span_lengths": dict(sorted(gold_lengths.items())),
    }


# ---------------------------------------------------------------------------
# vocabularies and role co-occurrence
# ---------------------------------------------------------------------------


def build_vocabularies(frames: list[EventFrame]) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """Stable sorted event-type and global role vocabularies."""
    if not frames:
        raise ValidationError("cannot build vocabularies from an empty corpus")
    events = sorted({f.event_type for f in frames})
    roles = sorted({r for f in frames for r in f.roles})
    return tuple(events), tuple(roles)


def compute_role_cooccurrence(frames: list[EventFrame],
                              roles: tuple[str, ...]) -> CooccurrenceMatrix:
    """counts[i, j] = number of events whose gold arguments use both roles."""
    index = {r: i for i, r in enumerate(roles)}
    counts = np.zeros((len(roles), len(roles)), dtype=np.int64)
    for f in frames:
        present = sorted({index[r] for r, _ in f.gold_args if r in index})
        for a_pos, i in enumerate(present):
            for j in present[a_pos + 1:]:
                counts[i, j] += 1
                counts[j, i] += 1
    np.fill_diagonal(counts, 0)
    return CooccurrenceMatrix(roles=roles, counts=counts)


def role_frequencies(frames: list[EventFrame], roles: tuple[str, ...]) -> dict[str, int]:
    freq = {r: 0 for r in roles}
    for f in frames:
        for r, _ in f.gold_args:
            if r in freq:
                freq[r] += 1
    return freq


# ---------------------------------------------------------------------------
# synthetic benchmark generator
# ---------------------------------------------------------------------------

# Scenario clue vocabularies: the presence of a scenario-A clue word anywhere
# in the document decides the role pair of the event's two arguments.
CLUE_A_WORDS = tuple(f"cluea{i}" for i in range(10))
CLUE_B_WORDS = tuple(f"clueb{i}" for i in range(10))
PAIR_A = ("agent", "beneficiary")
PAIR_B = ("origin", "destination")
TRANSFER_ROLES = tuple(sorted(PAIR_A + PAIR_B))
LINK_ROLES = ("source", "target")
TRANSFER_TRIGGERS = tuple(f"trg{i}" for i in range(6))
LINK_TRIGGERS = tuple(f"mrk{i}" for i in range(4))


@dataclass
class SyntheticConfig:
    n_docs: int = 500
    n_entities: int = 24
    n_fillers: int = 40
    clue_fraction: float = 0.6
    events_per_doc: int = 1
    min_sentence_words: int = 5
    max_sentence_words: int = 9
    comma_rate: float = 0.18
    clue_repeats: int = 1
    clue_vocab: int = 10
    filler_sentences: int = 0

    def validate(self) -> None:
        if self.n_docs < 0 or self.n_entities < 2 or self.n_fillers < 4:
            raise ConfigError("synthetic config: need n_docs >= 0, n_entities >= 2, n_fillers >= 4")
        if not 0.0 <= self.clue_fraction <= 1.0:
            raise ConfigError("synthetic config: clue_fraction must be in [0, 1]")
        if self.min_sentence_words < 3 or self.max_sentence_words < self.min_sentence_words:
            raise ConfigError("synthetic config: bad sentence length bounds")
        if self.events_per_doc < 0:
            raise ConfigError("synthetic config: events_per_doc must be >= 0")
        if self.clue_repeats < 1:
            raise ConfigError("synthetic config: clue_repeats must be >= 1")
        if self.filler_sentences < 0:
            raise ConfigError("synthetic config: filler_sentences must be >= 0")
        if not 1 <= self.clue_vocab <= len(CLUE_A_WORDS):
            raise ConfigError(f"synthetic config: clue_vocab must be in [1, {len(CLUE_A_WORDS)}]")


def clue_scenario(words: tuple[str, ...] | list[str]) -> str:
    """Labeling rule: scenario 'A' iff a scenario-A clue word is present."""
    wordset = set(words)
    if wordset & set(CLUE_A_WORDS):
        return "A"
    return "B"


def transfer_gold_roles(words) -> tuple[str, str]:
    """Gold (near, far) roles of a transfer event under the labeling rule:
    the clue scenario picks the pair, the entity in the trigger's sentence
    takes the pair's first role and the distant entity takes the partner."""
    return PAIR_A if clue_scenario(words) == "A" else PAIR_B


def generate_synthetic(config: SyntheticConfig, seed: int) -> tuple[list[Document], list[EventFrame]]:
    """Deterministic clue-dependent benchmark corpus.

    Two event flavors are planted. ``transfer`` events (doc ids tagged
    ``-clue-``) have two single-word entity arguments whose roles are
    decidable only via a non-argument clue word elsewhere in the document:
    the clue picks the role pair, the entity in the trigger's sentence takes
    the first role of the pair, the entity in another sentence takes the
    partner role. ``link`` events (tagged ``-easy-``) are decidable from the
    entity word alone. Filler sentences carry interior commas so span
    exclusion has work to do.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    fillers = [f"f{i:02d}" for i in range(config.n_fillers)]
    entities = [f"ent{i:02d}" for i in range(config.n_entities)]

    def filler_run(k: int) -> list[str]:
        words = [fillers[rng.integers(0, len(fillers))] for _ in range(k)]
        # interior commas, never at the edges
        for pos in range(1, k - 1):
            if rng.random() < config.comma_rate:
                words[pos] = ","
        return words

    def sentence_with(payload: list[str]) -> list[str]:
        total = int(rng.integers(config.min_sentence_words, config.max_sentence_words + 1))
        pad = max(total - len(payload), 2)
        left = int(rng.integers(1, pad))
        out = filler_run(left) + payload + filler_run(pad - left)
        out.append(".")
        return out

    docs: list[Document] = []
    frames: list[EventFrame] = []
    for d in range(config.n_docs):
        is_clue = rng.random() < config.clue_fraction
        tag = "clue" if is_clue else "easy"
        doc_id = f"synth-{seed}-{tag}-{d:04d}"
        sentences: list[list[str]] = []
        events: list[dict] = []

        # unique payload words within a document so positions stay unambiguous
        ent_deck = [entities[i] for i in rng.permutation(len(entities))]
        trig_deck = ([TRANSFER_TRIGGERS[i] for i in rng.permutation(len(TRANSFER_TRIGGERS))]
                     if is_clue else
                     [LINK_TRIGGERS[i] for i in rng.permutation(len(LINK_TRIGGERS))])

        for _ in range(min(config.events_per_doc, len(trig_deck), len(ent_deck) // 2)):
            if is_clue:
                trigger_word = trig_deck.pop()
                near_ent, far_ent = ent_deck.pop(), ent_deck.pop()
                scenario = "A" if rng.random() < 0.5 else "B"
                clue_pool = CLUE_A_WORDS if scenario == "A" else CLUE_B_WORDS
                clue_word = clue_pool[rng.integers(0, config.clue_vocab)]
                sentences.extend([sentence_with([trigger_word, near_ent]),
                                  sentence_with([far_ent]),
                                  sentence_with([clue_word] * config.clue_repeats),
                                  sentence_with([])])
                events.append({"kind": "transfer", "trigger_word": trigger_word,
                               "near": near_ent, "far": far_ent})
            else:
                trigger_word = trig_deck.pop()
                e1, e2 = ent_deck.pop(), ent_deck.pop()
                sentences.extend([sentence_with([trigger_word]), sentence_with([e1]),
                                  sentence_with([e2])])
                events.append({"kind": "link", "e1": e1, "e2": e2, "trigger_word": trigger_word})

        for _ in range(config.filler_sentences):
            sentences.append(sentence_with([]))
        if not events:
            sentences.extend([sentence_with([]), sentence_with([])])

        # sentence order is fixed per event kind; the role pair is decidable
        # only from the clue word's identity, never from position
        words: list[str] = []
        starts: list[int] = []
        for sent in sentences:
            starts.append(len(words))
            words.extend(sent)
        doc = Document(doc_id, tuple(words), tuple(starts))
        docs.append(doc)

        def find_word(w: str) -> int:
            return words.index(w)

        for idx, ev in enumerate(events):
            if ev["kind"] == "transfer":
                trig = find_word(ev["trigger_word"])
                near_pos = find_word(ev["near"])
                far_pos = find_word(ev["far"])
                near_role, far_role = transfer_gold_roles(words)
                args = ((near_role, (near_pos, near_pos)), (far_role, (far_pos, far_pos)))
                frame = EventFrame(doc_id, idx, "transfer", (trig, trig),
                                   TRANSFER_ROLES, args,
                                   gold_heads=tuple(((sp, sp[0]) for _, sp in args)))
            else:
                trig = find_word(ev["trigger_word"])
                p1 = find_word(ev["e1"])
                p2 = find_word(ev["e2"])
                r1 = LINK_ROLES[int(ev["e1"][3:]) % 2]
                r2 = LINK_ROLES[int(ev["e2"][3:]) % 2]
                args = ((r1, (p1, p1)), (r2, (p2, p2)))
                frame = EventFrame(doc_id, idx, "link", (trig, trig),
                                   LINK_ROLES, args,
                                   gold_heads=tuple(((sp, sp[0]) for _, sp in args)))
            frame.validate(doc)
            frames.append(frame)
    return docs, frames


def far_argument_items(docs: list[Document], frames: list[EventFrame]) -> set[tuple]:
    """Gold items for partner-decided arguments of transfer events: the
    argument whose entity sits outside the trigger's sentence."""
    doc_index = {d.doc_id: d for d in docs}
    items = set()
    for f in frames:
        if f.event_type != "transfer":
            continue
        doc = doc_index[f.doc_id]
        trig_sent = doc.sentence_of(f.trigger[0])
        for role, span in f.gold_args:
            if doc.sentence_of(span[0]) != trig_sent:
                items.add((f.doc_id, f.event_index, f.event_type, role, span))
    return items
