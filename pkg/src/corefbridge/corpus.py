"""Annotated documents: CoNLL-U ingestion, validation, synthetic corpora.

A document bundles sentences of dependency-parsed tokens, mention spans and
(optionally) gold coreference chains.  Coreference annotations ride on
CoNLL-U comment lines so a corpus stays a single file:

    # newdoc id = doc-1
    # mentions = [[0, 0, 1, 1], [0, 3, 3, 3]]     (sentence, start, end, head)
    # chains = [[0, 1]]                           (mention ids by list position)

Token indices in comments are 0-based; the CoNLL-U token columns keep the
usual 1-based convention with HEAD=0 for the root.  Semantic roles travel in
the MISC column as ``Role=<label>``.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .errors import (
    BadChainReference,
    BadMentionSpan,
    CycleInTree,
    DanglingHead,
    DuplicateMentionId,
    InvalidConfig,
    MalformedLine,
    MultipleRoots,
    OverlappingChains,
    TreeCountMismatch,
    TreeTokenMismatch,
)
from .hashing import mix

#: Head sentinel for the syntactic root (CoNLL-U HEAD=0 maps here).
ROOT = -1

_CONLLU_COLUMNS = 10


@dataclass(frozen=True)
class Token:
    index: int
    surface: str
    upos: str
    head: int          # ROOT or 0-based index within the same sentence
    deprel: str
    role: Optional[str] = None


@dataclass(frozen=True)
class ParseTree:
    sentence_index: int
    edges: tuple          # (dependent, head, deprel), root edge excluded
    root: int


@dataclass(frozen=True)
class Mention:
    id: int
    sentence_index: int
    start: int            # inclusive
    end: int              # inclusive
    head_token: int


@dataclass(frozen=True)
class ChainSet:
    """A partition of mention ids; singletons are stored as size-1 chains.

    Chain order is canonicalized at construction (sorted by members), so two
    ChainSets over the same partition compare equal.
    """

    chains: tuple         # tuple of frozensets

    def __post_init__(self):
        canon = tuple(sorted((frozenset(c) for c in self.chains if c),
                             key=lambda c: sorted(c)))
        object.__setattr__(self, "chains", canon)

    @staticmethod
    def from_lists(chains: Iterable[Iterable[int]]) -> "ChainSet":
        return ChainSet(tuple(frozenset(c) for c in chains))

    def normalized(self) -> tuple:
        """Chains as sorted lists, ordered by smallest member."""
        return tuple(sorted((sorted(c) for c in self.chains), key=lambda c: c[0]))

    def completed(self, mention_ids: Iterable[int]) -> "ChainSet":
        """Return a full partition, adding size-1 chains for unlisted ids."""
        seen = set()
        for c in self.chains:
            seen.update(c)
        extra = [frozenset([m]) for m in sorted(set(mention_ids) - seen)]
        return ChainSet(tuple(c for c in self.chains if c) + tuple(extra))

    def chain_of(self) -> dict:
        return {m: i for i, c in enumerate(self.chains) for m in c}


@dataclass(frozen=True)
class Document:
    id: str
    sentences: tuple      # tuple of tuples of Token
    trees: tuple          # tuple of ParseTree
    mentions: tuple       # tuple of Mention
    gold_chains: Optional[ChainSet] = None

    @property
    def n_tokens(self) -> int:
        return sum(len(s) for s in self.sentences)

    def sentence_offsets(self) -> list:
        offs, total = [], 0
        for s in self.sentences:
            offs.append(total)
            total += len(s)
        return offs

    def flat_index(self, sentence_index: int, token_index: int) -> int:
        return self.sentence_offsets()[sentence_index] + token_index

    def mentions_in_order(self) -> list:
        """Mentions sorted by document position (sentence, start, end, id)."""
        return sorted(
            self.mentions,
            key=lambda m: (m.sentence_index, m.start, m.end, m.id),
        )


def build_tree(sentence_index: int, tokens, doc_id=None, line=None) -> ParseTree:
    """Derive the ParseTree for one sentence, checking tree invariants."""
    n = len(tokens)
    roots = [t.index for t in tokens if t.head == ROOT]
    if len(roots) > 1:
        raise MultipleRoots(
            f"{len(roots)} roots", doc_id=doc_id, sentence=sentence_index, line=line
        )
    for t in tokens:
        if t.head != ROOT and not (0 <= t.head < n):
            raise DanglingHead(
                f"token {t.index} head {t.head} out of range",
                doc_id=doc_id, sentence=sentence_index, line=line,
            )
        if t.head == t.index:
            raise CycleInTree(
                f"token {t.index} is its own head",
                doc_id=doc_id, sentence=sentence_index, line=line,
            )
    # Every token must reach ROOT in <= n hops; a failure means a cycle
    # (which also covers the zero-root case).
    for t in tokens:
        cur, hops = t.head, 0
        while cur != ROOT:
            cur = tokens[cur].head
            hops += 1
            if hops > n:
                raise CycleInTree(
                    f"no path to root from token {t.index}",
                    doc_id=doc_id, sentence=sentence_index, line=line,
                )
    if not roots:
        raise MultipleRoots(
            "no root", doc_id=doc_id, sentence=sentence_index, line=line
        )
    edges = tuple(
        (t.index, t.head, t.deprel) for t in tokens if t.head != ROOT
    )
    return ParseTree(sentence_index=sentence_index, edges=edges, root=roots[0])


def validate_document(doc: Document) -> None:
    """Check every type invariant; raise the first violation found."""
    if len(doc.trees) != len(doc.sentences):
        raise TreeCountMismatch(
            f"{len(doc.trees)} trees for {len(doc.sentences)} sentences",
            doc_id=doc.id,
        )
    for s_idx, sent in enumerate(doc.sentences):
        for t in sent:
            if not t.deprel:
                raise MalformedLine(
                    f"token {t.index} has empty deprel", doc_id=doc.id,
                    sentence=s_idx,
                )
        tree = build_tree(s_idx, sent, doc_id=doc.id)
        if tree != doc.trees[s_idx]:
            raise TreeTokenMismatch(
                "tree disagrees with token heads", doc_id=doc.id, sentence=s_idx
            )
    seen_ids = set()
    for m in doc.mentions:
        if m.id in seen_ids:
            raise DuplicateMentionId(f"mention id {m.id}", doc_id=doc.id)
        seen_ids.add(m.id)
        if not (0 <= m.sentence_index < len(doc.sentences)):
            raise BadMentionSpan(
                f"mention {m.id} sentence {m.sentence_index} out of range",
                doc_id=doc.id,
            )
        n = len(doc.sentences[m.sentence_index])
        if not (0 <= m.start <= m.end < n):
            raise BadMentionSpan(
                f"mention {m.id} span [{m.start},{m.end}] invalid",
                doc_id=doc.id, sentence=m.sentence_index,
            )
        if not (m.start <= m.head_token <= m.end):
            raise BadMentionSpan(
                f"mention {m.id} head {m.head_token} outside span",
                doc_id=doc.id, sentence=m.sentence_index,
            )
    if doc.gold_chains is not None:
        assigned = set()
        for chain in doc.gold_chains.chains:
            for m_id in chain:
                if m_id not in seen_ids:
                    raise BadChainReference(
                        f"chain references unknown mention {m_id}", doc_id=doc.id
                    )
                if m_id in assigned:
                    raise OverlappingChains(
                        f"mention {m_id} in two chains", doc_id=doc.id
                    )
                assigned.add(m_id)


# --- CoNLL-U ---------------------------------------------------------------

def _parse_role(misc: str) -> Optional[str]:
    if misc in ("", "_"):
        return None
    for item in misc.split("|"):
        if item.startswith("Role="):
            return item[len("Role="):]
    return None


def parse_conllu(text: str) -> list:
    """Parse a CoNLL-U corpus (with coref comment lines) into Documents."""
    docs = []
    doc_id = None
    sentences, mention_rows, chain_rows = [], None, None
    cur_tokens = []          # (line_no, 1-based id, surface, upos, head, deprel, role)
    sent_start_line = None

    def close_sentence():
        nonlocal cur_tokens, sent_start_line
        if not cur_tokens:
            return
        s_idx = len(sentences)
        toks = []
        for line_no, tid, surface, upos, head, deprel, role in cur_tokens:
            head0 = ROOT if head == 0 else head - 1
            toks.append(Token(index=tid - 1, surface=surface, upos=upos,
                              head=head0, deprel=deprel, role=role))
        for pos, t in enumerate(toks):
            if t.index != pos:
                raise MalformedLine(
                    f"token ids not consecutive at {t.index + 1}",
                    doc_id=doc_id, sentence=s_idx, line=sent_start_line,
                )
        build_tree(s_idx, toks, doc_id=doc_id, line=sent_start_line)
        sentences.append(tuple(toks))
        cur_tokens = []
        sent_start_line = None

    def close_document():
        nonlocal sentences, mention_rows, chain_rows
        close_sentence()
        if not sentences and mention_rows is None and chain_rows is None:
            return
        mentions = []
        for m_id, row in enumerate(mention_rows or []):
            mentions.append(Mention(id=m_id, sentence_index=row[0],
                                    start=row[1], end=row[2], head_token=row[3]))
        gold = None
        if chain_rows is not None:
            gold = ChainSet.from_lists(chain_rows).completed(
                [m.id for m in mentions]
            )
        doc = Document(
            id=doc_id if doc_id is not None else f"doc{len(docs)}",
            sentences=tuple(sentences),
            trees=tuple(build_tree(i, s) for i, s in enumerate(sentences)),
            mentions=tuple(mentions),
            gold_chains=gold,
        )
        validate_document(doc)
        docs.append(doc)
        sentences, mention_rows, chain_rows = [], None, None

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            close_sentence()
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("newdoc"):
                close_document()
                doc_id = body.split("=", 1)[1].strip() if "=" in body else None
            elif body.startswith("mentions"):
                try:
                    mention_rows = json.loads(body.split("=", 1)[1])
                except (IndexError, json.JSONDecodeError) as exc:
                    raise MalformedLine(
                        f"bad mentions payload: {exc}", doc_id=doc_id, line=line_no
                    )
            elif body.startswith("chains"):
                try:
                    chain_rows = json.loads(body.split("=", 1)[1])
                except (IndexError, json.JSONDecodeError) as exc:
                    raise MalformedLine(
                        f"bad chains payload: {exc}", doc_id=doc_id, line=line_no
                    )
            continue
        cols = line.split("\t")
        if len(cols) != _CONLLU_COLUMNS:
            raise MalformedLine(
                f"{len(cols)} columns, expected {_CONLLU_COLUMNS}",
                doc_id=doc_id, sentence=len(sentences), line=line_no,
            )
        # Multiword-token ranges and empty nodes carry no tree structure.
        if "-" in cols[0] or "." in cols[0]:
            continue
        try:
            tid = int(cols[0])
            head = int(cols[6])
        except ValueError:
            raise MalformedLine(
                f"non-integer ID/HEAD {cols[0]!r}/{cols[6]!r}",
                doc_id=doc_id, sentence=len(sentences), line=line_no,
            )
        if not cols[7] or cols[7] == "_":
            raise MalformedLine(
                "empty DEPREL", doc_id=doc_id, sentence=len(sentences), line=line_no
            )
        if sent_start_line is None:
            sent_start_line = line_no
        cur_tokens.append(
            (line_no, tid, cols[1], cols[3], head, cols[7], _parse_role(cols[9]))
        )
    close_document()
    return docs


def to_conllu(docs) -> str:
    """Serialize documents back to the CoNLL-U + comment-line format."""
    if isinstance(docs, Document):
        docs = [docs]
    out = []
    for doc in docs:
        out.append(f"# newdoc id = {doc.id}")
        rows = [[m.sentence_index, m.start, m.end, m.head_token]
                for m in doc.mentions]
        out.append(f"# mentions = {json.dumps(rows, separators=(', ', ': '))}")
        if doc.gold_chains is not None:
            payload = [list(c) for c in doc.gold_chains.normalized()]
            out.append(f"# chains = {json.dumps(payload, separators=(', ', ': '))}")
        for s_idx, sent in enumerate(doc.sentences):
            out.append(f"# sent_id = {doc.id}-{s_idx}")
            for t in sent:
                head1 = 0 if t.head == ROOT else t.head + 1
                misc = f"Role={t.role}" if t.role is not None else "_"
                out.append("\t".join([
                    str(t.index + 1), t.surface, "_", t.upos, "_", "_",
                    str(head1), t.deprel, "_", misc,
                ]))
            out.append("")
    return "\n".join(out) + "\n"


# --- canonical JSON --------------------------------------------------------

def doc_to_json(doc: Document) -> str:
    """Canonical serialization; field order is fixed for bit-exact round-trips."""
    payload = {
        "id": doc.id,
        "sentences": [
            [
                {"index": t.index, "surface": t.surface, "upos": t.upos,
                 "head": t.head, "deprel": t.deprel, "role": t.role}
                for t in sent
            ]
            for sent in doc.sentences
        ],
        "trees": [
            {"sentence_index": tr.sentence_index, "root": tr.root,
             "edges": [list(e) for e in tr.edges]}
            for tr in doc.trees
        ],
        "mentions": [
            {"id": m.id, "sentence_index": m.sentence_index, "start": m.start,
             "end": m.end, "head_token": m.head_token}
            for m in doc.mentions
        ],
        "gold_chains": (
            [list(c) for c in doc.gold_chains.normalized()]
            if doc.gold_chains is not None else None
        ),
    }
    return json.dumps(payload, separators=(",", ":"), ensure_ascii=True)


def doc_from_json(text: str) -> Document:
    payload = json.loads(text)
    sentences = tuple(
        tuple(Token(index=t["index"], surface=t["surface"], upos=t["upos"],
                    head=t["head"], deprel=t["deprel"], role=t["role"])
              for t in sent)
        for sent in payload["sentences"]
    )
    trees = tuple(
        ParseTree(sentence_index=tr["sentence_index"],
                  edges=tuple(tuple(e) for e in tr["edges"]),
                  root=tr["root"])
        for tr in payload["trees"]
    )
    mentions = tuple(
        Mention(id=m["id"], sentence_index=m["sentence_index"], start=m["start"],
                end=m["end"], head_token=m["head_token"])
        for m in payload["mentions"]
    )
    gold = None
    if payload["gold_chains"] is not None:
        gold = ChainSet.from_lists(payload["gold_chains"])
    return Document(id=payload["id"], sentences=sentences, trees=trees,
                    mentions=mentions, gold_chains=gold)


# --- synthetic corpus ------------------------------------------------------

_PRONOUNS = ("it", "they", "this", "one")
_CARRIERS = ("part", "side", "kind", "form")
_DETS = ("the", "a")
_MENTION_DEPRELS = ("nsubj", "obj")
_ROLES = ("agent", "patient", "theme", "goal")


@dataclass
class _Entity:
    lexeme: str
    deprel_sig: str
    depth_sig: int        # 1 = direct dependent of the verb, 2 = nested nmod
    role_sig: str
    n_mentions: int


@dataclass
class _Request:
    entity: Optional[_Entity]     # None marks a singleton mention
    first: bool
    surface: str = ""
    upos: str = ""
    deprel: str = ""
    depth: int = 1
    role: str = ""


def gen_synthetic(seed: int, n_docs: int, sentences_per_doc: int = 6,
                  vocab_size: int = 60, syntax_signal: float = 0.8) -> list:
    """Generate a deterministic corpus with controllable syntactic regularity.

    Each document introduces a handful of entities.  An entity owns a lexeme,
    a preferred dependency relation, a preferred attachment depth and a
    semantic role; each of its mentions honors those preferences with
    probability ``syntax_signal`` (the lexeme is repeated at a rate
    proportional to the signal, otherwise a generic pronoun surface is used).
    Entity identity is therefore mostly carried by parse-tree position and
    role labels rather than by word forms, and gold chains are attached.

    Same arguments always produce a bit-identical corpus.
    """
    if n_docs < 0:
        raise InvalidConfig(f"n_docs must be >= 0, got {n_docs}")
    if vocab_size < 10:
        raise InvalidConfig(f"vocab_size must be >= 10, got {vocab_size}")
    if sentences_per_doc < 1:
        raise InvalidConfig(f"sentences_per_doc must be >= 1, got {sentences_per_doc}")
    if not (0.0 <= syntax_signal <= 1.0):
        raise InvalidConfig(f"syntax_signal must be in [0,1], got {syntax_signal}")
    docs = []
    for k in range(n_docs):
        rng = random.Random(mix(seed, k))
        docs.append(_gen_doc(rng, f"synth-{seed}-{k:04d}", sentences_per_doc,
                             vocab_size, syntax_signal))
    return docs


def _gen_doc(rng: random.Random, doc_id: str, n_sents: int, vocab_size: int,
             signal: float) -> Document:
    nouns = [f"w{idx:03d}" for idx in range(vocab_size)]
    verbs = [f"v{idx:03d}" for idx in range(max(8, vocab_size // 4))]
    rng.shuffle(nouns)

    n_entities = min(rng.randint(4, 6), 2 * n_sents)
    entities = []
    for e_idx in range(n_entities):
        entities.append(_Entity(
            lexeme=nouns.pop(),
            deprel_sig=rng.choice(_MENTION_DEPRELS),
            depth_sig=rng.choice((1, 2)),
            role_sig=rng.choice(_ROLES),
            n_mentions=rng.randint(2, 4),
        ))

    slots_per_sent = [2 + (1 if rng.random() < 0.5 else 0) for _ in range(n_sents)]
    total_slots = sum(slots_per_sent)
    n_singletons = max(1, total_slots // 8)
    requests = []
    for ent in entities:
        for j in range(ent.n_mentions):
            requests.append(_Request(entity=ent, first=(j == 0)))
    rng.shuffle(requests)
    if len(requests) > total_slots - n_singletons:
        requests.sort(key=lambda r: not r.first)  # stable; introductions survive
        requests = requests[: total_slots - n_singletons]
    while len(requests) < total_slots:
        requests.append(_Request(entity=None, first=True))
    rng.shuffle(requests)

    filler_words = nouns[: max(6, vocab_size // 3)]
    for req in requests:
        ent = req.entity
        if ent is None:
            req.surface = rng.choice(filler_words)
            req.upos = "NOUN"
            req.deprel = rng.choice(_MENTION_DEPRELS)
            req.depth = rng.choice((1, 2))
            req.role = rng.choice(_ROLES)
            continue
        use_lex = req.first or rng.random() < 0.35 * signal + 0.05
        req.surface = ent.lexeme if use_lex else rng.choice(_PRONOUNS)
        req.upos = "NOUN" if use_lex else "PRON"
        req.deprel = ent.deprel_sig if rng.random() < signal else (
            _MENTION_DEPRELS[1 - _MENTION_DEPRELS.index(ent.deprel_sig)])
        req.depth = ent.depth_sig if rng.random() < signal else 3 - ent.depth_sig
        if rng.random() < signal:
            req.role = ent.role_sig
        else:
            req.role = rng.choice([r for r in _ROLES if r != ent.role_sig])

    sentences, mentions, chain_map = [], [], {}
    cursor = 0
    for s_idx in range(n_sents):
        batch = requests[cursor: cursor + slots_per_sent[s_idx]]
        cursor += slots_per_sent[s_idx]
        sent, ment_rows = _build_sentence(rng, batch, filler_words, verbs)
        for (start, end, head, ent) in ment_rows:
            m_id = len(mentions)
            mentions.append(Mention(id=m_id, sentence_index=s_idx,
                                    start=start, end=end, head_token=head))
            if ent is not None:
                chain_map.setdefault(id(ent), []).append(m_id)
        sentences.append(tuple(sent))

    chains = [frozenset(ms) for ms in chain_map.values() if len(ms) >= 2]
    gold = ChainSet(tuple(chains)).completed([m.id for m in mentions])
    doc = Document(
        id=doc_id,
        sentences=tuple(sentences),
        trees=tuple(build_tree(i, s) for i, s in enumerate(sentences)),
        mentions=tuple(mentions),
        gold_chains=gold,
    )
    validate_document(doc)
    return doc


def _build_sentence(rng, batch, filler_words, verbs):
    """Realize one verb-rooted sentence holding the batch's mention slots."""
    words = []   # (surface, upos, head_slot, deprel, role); head resolved later
    ment_rows = []
    verb_pos = None

    def emit(surface, upos, head, deprel, role=None):
        words.append([surface, upos, head, deprel, role])
        return len(words) - 1

    # Mention NPs come first in subject position order, then the verb, then
    # the rest; this keeps linear order varied without extra bookkeeping.
    pre = [r for r in batch if r.deprel == "nsubj"]
    post = [r for r in batch if r.deprel != "nsubj"]

    def realize(req):
        if req.depth == 1:
            start = None
            if req.upos == "NOUN" and rng.random() < 0.5:
                start = emit(rng.choice(_DETS), "DET", "noun+1", "det")
            head = emit(req.surface, req.upos, "verb", req.deprel, req.role)
            if start is not None:
                words[start][2] = head
            ment_rows.append((start if start is not None else head, head, head,
                              req.entity))
        else:
            carrier = emit(rng.choice(_CARRIERS), "NOUN", "verb", req.deprel)
            head = emit(req.surface, req.upos, carrier, "nmod", req.role)
            ment_rows.append((head, head, head, req.entity))

    for req in pre:
        realize(req)
    verb_pos = emit(rng.choice(verbs), "VERB", ROOT, "root")
    for req in post:
        realize(req)
    if rng.random() < 0.6:
        emit(rng.choice(filler_words), "ADV", verb_pos, "advmod")
    emit(".", "PUNCT", verb_pos, "punct")

    tokens = []
    for idx, (surface, upos, head, deprel, role) in enumerate(words):
        if head == "verb":
            head = verb_pos
        tokens.append(Token(index=idx, surface=surface, upos=upos,
                            head=head, deprel=deprel, role=role))
    return tokens, ment_rows
