"""Task metrics: token tagging accuracy, macro-averaged labeled attachment
score, and exact-match BIO span F1."""

from __future__ import annotations

__all__ = [
    "tagging_accuracy",
    "macro_las",
    "span_f1",
    "repair_bio",
    "bio_spans",
]


def tagging_accuracy(pred: list[list[str]], gold: list[list[str]]) -> float:
    """Micro token-level accuracy over a corpus."""
    correct = total = 0
    for p, g in zip(pred, gold, strict=True):
        if len(p) != len(g):
            raise ValueError("prediction/gold length mismatch")
        correct += sum(a == b for a, b in zip(p, g))
        total += len(g)
    return correct / total if total else 0.0


def macro_las(pred_heads: list[list[int]], pred_rels: list[list[str]],
              gold_heads: list[list[int]], gold_rels: list[list[str]]) -> float:
    """Unweighted mean over sentences of per-sentence labeled attachment
    score; a token counts iff both its head and its label match."""
    scores = []
    for ph, pr, gh, gr in zip(pred_heads, pred_rels, gold_heads, gold_rels, strict=True):
        if not len(ph) == len(pr) == len(gh) == len(gr):
            raise ValueError("prediction/gold length mismatch")
        n = len(gh)
        ok = sum(1 for i in range(n) if ph[i] == gh[i] and pr[i] == gr[i])
        scores.append(ok / n if n else 0.0)
    return sum(scores) / len(scores) if scores else 0.0


def repair_bio(tags: list[str]) -> list[str]:
    """Rewrite an ill-formed I-X (after O, or after a different type) as
    B-X. Idempotent; well-formed input passes through unchanged."""
    out = []
    prev_type = None
    for tag in tags:
        if tag.startswith("I-"):
            if prev_type != tag[2:]:
                tag = "B-" + tag[2:]
            prev_type = tag[2:]
        elif tag.startswith("B-"):
            prev_type = tag[2:]
        else:
            prev_type = None
        out.append(tag)
    return out


def bio_spans(tags: list[str]) -> list[tuple[int, int, str]]:
    """(start, end_exclusive, type) spans of a well-formed BIO sequence:
    each span is a maximal B-X followed by a run of I-X."""
    spans = []
    start = None
    cur = None
    for i, tag in enumerate(tags):
        if tag.startswith("B-"):
            if start is not None:
                spans.append((start, i, cur))
            start, cur = i, tag[2:]
        elif tag.startswith("I-") and cur == tag[2:] and start is not None:
            continue
        else:
            if start is not None:
                spans.append((start, i, cur))
            start, cur = None, None
    if start is not None:
        spans.append((start, len(tags), cur))
    return spans


def span_f1(pred_bio: list[list[str]], gold_bio: list[list[str]]) -> tuple[float, float, float]:
    """Exact-match entity span precision/recall/F1 over a corpus.

    Ill-formed predictions are repaired (I-X after O becomes B-X) before
    span extraction; a predicted span scores iff its type and both
    boundaries match a gold span.
    """
    tp = fp = fn = 0
    for p, g in zip(pred_bio, gold_bio, strict=True):
        ps = set(bio_spans(repair_bio(p)))
        gs = set(bio_spans(repair_bio(g)))
        tp += len(ps & gs)
        fp += len(ps - gs)
        fn += len(gs - ps)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1
