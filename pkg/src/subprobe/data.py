"""Annotated sentences: synthetic grammar generation plus CoNLL-U and
CoNLL-2003 readers/writers.

The synthetic language ships as a plain-text grammar file with three
sections. [LEXICON] and [ENTITIES] define word classes (`name = w1 w2
...`, where `@other` splices a previously usable class, repetition
allowed to weight sampling). [TEMPLATES] defines weighted productions
with one fully-specified annotation per slot:

    weight | cells | pos | heads | rels | bio

Heads are 1-based with 0 for the root; every template must form a tree.
Because annotations are fixed per template while surface words are
sampled, every generated sentence has deterministic gold structure and
the corpus-level tag mixture is analytically known from the weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import RngState

__all__ = [
    "Sentence",
    "Corpus",
    "Vocab",
    "Template",
    "SyntheticGrammar",
    "load_grammar",
    "parse_grammar",
    "default_grammar_path",
    "generate_corpus",
    "read_conllu",
    "write_conllu",
    "read_conll2003",
    "write_conll2003",
]

PAD, MASK, UNK, ROOT = "[PAD]", "[MASK]", "[UNK]", "[ROOT]"
RESERVED = (PAD, MASK, UNK, ROOT)


@dataclass
class Sentence:
    tokens: list[str]
    pos: list[str] | None = None
    heads: list[int] | None = None
    deprels: list[str] | None = None
    bio: list[str] | None = None

    def __len__(self) -> int:
        return len(self.tokens)

    def validate(self) -> None:
        n = len(self.tokens)
        if n == 0:
            raise ValueError("empty sentence")
        for name in ("pos", "heads", "deprels", "bio"):
            v = getattr(self, name)
            if v is not None and len(v) != n:
                raise ValueError(f"annotation {name!r} length {len(v)} != {n} tokens")
        if self.heads is not None:
            _validate_tree(self.heads)
        if self.bio is not None:
            _validate_bio(self.bio)


def _validate_tree(heads: list[int]) -> None:
    n = len(heads)
    roots = [i for i, h in enumerate(heads) if h == 0]
    if len(roots) != 1:
        raise ValueError(f"expected exactly one root-attached token, got {len(roots)}")
    for i, h in enumerate(heads):
        if not 0 <= h <= n:
            raise ValueError(f"head index {h} out of range at token {i + 1}")
        if h == i + 1:
            raise ValueError(f"token {i + 1} is its own head")
    # walking up from any token must reach the root without revisiting
    for i in range(n):
        seen = set()
        j = i + 1
        while j != 0:
            if j in seen:
                raise ValueError(f"head cycle involving token {j}")
            seen.add(j)
            j = heads[j - 1]


def _validate_bio(bio: list[str]) -> None:
    prev = "O"
    for i, tag in enumerate(bio):
        if tag != "O" and (len(tag) < 3 or tag[1] != "-" or tag[0] not in "BI"):
            raise ValueError(f"malformed BIO tag {tag!r} at position {i}")
        if tag.startswith("I-"):
            if prev == "O" or prev[2:] != tag[2:]:
                raise ValueError(f"I-{tag[2:]} continues nothing at position {i}")
        prev = tag


@dataclass
class Corpus:
    sentences: list[Sentence]

    def __len__(self) -> int:
        return len(self.sentences)

    def split(self, train_frac: float = 0.85) -> tuple["Corpus", "Corpus"]:
        """Deterministic train/dev split by index."""
        cut = int(len(self.sentences) * train_frac)
        return Corpus(self.sentences[:cut]), Corpus(self.sentences[cut:])

    def tokens(self):
        for s in self.sentences:
            yield from s.tokens


class Vocab:
    """Token <-> id maps with reserved [PAD]/[MASK]/[UNK]/[ROOT] slots."""

    def __init__(self, words: list[str]):
        self.itos = list(RESERVED) + list(words)
        if len(set(self.itos)) != len(self.itos):
            raise ValueError("vocabulary contains duplicate or reserved words")
        self.stoi = {w: i for i, w in enumerate(self.itos)}

    @classmethod
    def from_tokens(cls, tokens) -> "Vocab":
        return cls(sorted(set(tokens) - set(RESERVED)))

    def __len__(self) -> int:
        return len(self.itos)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def mask_id(self) -> int:
        return 1

    @property
    def unk_id(self) -> int:
        return 2

    def encode(self, tokens: list[str]) -> np.ndarray:
        unk = self.unk_id
        return np.array([self.stoi.get(t, unk) for t in tokens], dtype=np.int64)


# ---------------------------------------------------------------------------
# grammar
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Template:
    weight: float
    cells: tuple[str, ...]
    pos: tuple[str, ...]
    heads: tuple[int, ...]
    rels: tuple[str, ...]
    bio: tuple[str, ...]


@dataclass
class SyntheticGrammar:
    classes: dict[str, list[str]]
    entity_classes: list[str]
    templates: list[Template]
    min_len: int = 5
    max_len: int = 15

    def __post_init__(self):
        for t in self.templates:
            if not self.min_len <= len(t.cells) <= self.max_len:
                raise ValueError(
                    f"template length {len(t.cells)} outside [{self.min_len}, {self.max_len}]"
                )
            for c in t.cells:
                if c not in self.classes:
                    raise ValueError(f"template references unknown class {c!r}")
            Sentence(list(t.cells), list(t.pos), list(t.heads),
                     list(t.rels), list(t.bio)).validate()
        self._cum_weights = np.cumsum([t.weight for t in self.templates])

    def vocab(self) -> Vocab:
        words = set()
        for ws in self.classes.values():
            words.update(ws)
        return Vocab(sorted(words))

    def tag_mixture(self) -> dict[str, float]:
        """Analytic POS distribution implied by the template weights."""
        counts: dict[str, float] = {}
        total = 0.0
        for t in self.templates:
            for tag in t.pos:
                counts[tag] = counts.get(tag, 0.0) + t.weight
            total += t.weight * len(t.pos)
        return {k: v / total for k, v in sorted(counts.items())}


def parse_grammar(text: str) -> SyntheticGrammar:
    classes: dict[str, list[str]] = {}
    raw_defs: list[tuple[str, list[str], str]] = []
    templates: list[Template] = []
    entity_classes: list[str] = []
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].upper()
            if section not in ("LEXICON", "ENTITIES", "TEMPLATES"):
                raise ValueError(f"line {lineno}: unknown section {section!r}")
            continue
        if section in ("LEXICON", "ENTITIES"):
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'name = words'")
            name, words = line.split("=", 1)
            raw_defs.append((name.strip(), words.split(), section))
        elif section == "TEMPLATES":
            cols = [c.strip() for c in line.split("|")]
            if len(cols) != 6:
                raise ValueError(
                    f"line {lineno}: template needs 6 '|' columns, got {len(cols)}"
                )
            weight = float(cols[0])
            cells, pos, heads, rels, bio = (c.split() for c in cols[1:])
            if not len(cells) == len(pos) == len(heads) == len(rels) == len(bio):
                raise ValueError(f"line {lineno}: template column lengths differ")
            templates.append(Template(weight, tuple(cells), tuple(pos),
                                      tuple(int(h) for h in heads),
                                      tuple(rels), tuple(bio)))
        else:
            raise ValueError(f"line {lineno}: content before any section header")

    # resolve @splices after all definitions are known
    for name, words, section in raw_defs:
        resolved: list[str] = []
        for w in words:
            if w.startswith("@"):
                ref = w[1:]
                target = classes.get(ref)
                if target is None:
                    target = next((ws for n, ws, _ in raw_defs
                                   if n == ref and not any(x.startswith("@") for x in ws)), None)
                if target is None:
                    raise ValueError(f"class {name!r} splices unknown class {ref!r}")
                resolved.extend(target)
            else:
                resolved.append(w)
        classes[name] = resolved
        if section == "ENTITIES":
            entity_classes.append(name)
    if not templates:
        raise ValueError("grammar defines no templates")
    return SyntheticGrammar(classes, entity_classes, templates)


def load_grammar(path: str | Path) -> SyntheticGrammar:
    return parse_grammar(Path(path).read_text(encoding="utf-8"))


def default_grammar_path() -> Path:
    return Path(__file__).parent / "grammars" / "default.grammar"


def generate_corpus(grammar: SyntheticGrammar, n_sentences: int,
                    rng: RngState) -> Corpus:
    """Sample sentences from the weighted templates; deterministic under
    the stream."""
    if n_sentences < 1:
        raise ValueError(f"n_sentences must be >= 1, got {n_sentences}")
    cum = grammar._cum_weights
    sentences = []
    for _ in range(n_sentences):
        t = grammar.templates[rng.choice_index(cum)]
        tokens = []
        for cell in t.cells:
            words = grammar.classes[cell]
            tokens.append(words[int(rng.integers(0, len(words)))])
        s = Sentence(tokens, list(t.pos), list(t.heads), list(t.rels), list(t.bio))
        sentences.append(s)
    return Corpus(sentences)


# ---------------------------------------------------------------------------
# CoNLL-U (10-column) reader/writer: FORM, UPOS, HEAD, DEPREL populated
# ---------------------------------------------------------------------------

def read_conllu(path: str | Path) -> Corpus:
    sentences: list[Sentence] = []
    tokens: list[str] = []
    pos: list[str] = []
    heads: list[int] = []
    rels: list[str] = []

    def flush():
        nonlocal tokens, pos, heads, rels
        if tokens:
            sentences.append(Sentence(tokens, pos, heads, rels, None))
            tokens, pos, heads, rels = [], [], [], []

    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.rstrip("\n")
            if not line.strip():
                flush()
                continue
            if line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 10:
                raise ValueError(f"{path}:{lineno}: expected 10 tab-separated "
                                 f"columns, got {len(cols)}")
            if "-" in cols[0] or "." in cols[0]:
                continue  # multiword ranges and empty nodes carry no tree position
            tokens.append(cols[1])
            pos.append(cols[3])
            heads.append(int(cols[6]) if cols[6] != "_" else 0)
            rels.append(cols[7])
    flush()
    return Corpus(sentences)


def write_conllu(corpus: Corpus, path: str | Path) -> None:
    lines = []
    for s in corpus.sentences:
        for i, tok in enumerate(s.tokens):
            head = s.heads[i] if s.heads is not None else 0
            rel = s.deprels[i] if s.deprels is not None else "_"
            upos = s.pos[i] if s.pos is not None else "_"
            lines.append(f"{i + 1}\t{tok}\t_\t{upos}\t_\t_\t{head}\t{rel}\t_\t_")
        lines.append("")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# CoNLL-2003 (4-column) reader/writer: token, POS, chunk, NER
# ---------------------------------------------------------------------------

def read_conll2003(path: str | Path) -> Corpus:
    sentences: list[Sentence] = []
    tokens: list[str] = []
    pos: list[str] = []
    bio: list[str] = []

    def flush():
        nonlocal tokens, pos, bio
        if tokens:
            sentences.append(Sentence(tokens, pos, None, None, bio))
            tokens, pos, bio = [], [], []

    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.rstrip("\n")
            if not line.strip():
                flush()
                continue
            if line.startswith("-DOCSTART-"):
                continue
            cols = line.split()
            if len(cols) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 whitespace-separated "
                                 f"columns, got {len(cols)}")
            tokens.append(cols[0])
            pos.append(cols[1])
            bio.append(cols[3])
    flush()
    return Corpus(sentences)


def write_conll2003(corpus: Corpus, path: str | Path) -> None:
    lines = []
    for s in corpus.sentences:
        for i, tok in enumerate(s.tokens):
            upos = s.pos[i] if s.pos is not None else "_"
            tag = s.bio[i] if s.bio is not None else "O"
            lines.append(f"{tok} {upos} O {tag}")
        lines.append("")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
