"""Dataset ingestion and prompt templating for QA experiments.

The on-disk format is JSON Lines, one example per line, with fields
``question`` (string), ``answers`` (list of strings) and ``ctxs`` (list of
``{"title": ..., "text": ...}``).  Document order is shuffled with a seeded
generator at ingest time so gold-document position cannot systematically
bias any method.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import ParseError, SchemaError
from .graph import TokenSegment
from .model import encode_text

REQUIRED_FIELDS = ("question", "answers", "ctxs")


@dataclass
class RagExample:
    question: str
    answers: list[str]
    contexts: list[dict]  # {"title": ..., "text": ..., optional "is_gold"}
    index: int = 0

    def __post_init__(self):
        if not self.answers:
            raise SchemaError("example has no gold answers")
        if not self.contexts:
            raise SchemaError("example has no contexts")


def ingest(path: str | Path, seed: int = 0) -> list[RagExample]:
    """Parse a JSONL dataset, shuffling each example's document order."""
    rng = random.Random(seed)
    examples: list[RagExample] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {lineno}: {exc}", line=lineno) from exc
            for fieldname in REQUIRED_FIELDS:
                if fieldname not in rec:
                    raise SchemaError(f"line {lineno}: missing field {fieldname!r}",
                                      line=lineno)
            ctxs = list(rec["ctxs"])
            rng.shuffle(ctxs)
            examples.append(
                RagExample(rec["question"], list(rec["answers"]), ctxs, len(examples))
            )
    return examples


@dataclass
class PromptTemplate:
    """Editable wording for the four prompt segments.

    The default mirrors the instruction-following layout commonly used for
    open-domain QA: an instruction block, one ``[Document](Title: ...)`` line
    per context, the question, then a response header the model completes.
    """

    preamble: str = (
        "Below is an instruction that describes a task. "
        "Write a response that appropriately completes the request.\n\n"
        "### Instruction:\n"
        "Write a high-quality answer for the given question using only the "
        "following relevant search results.\n\n"
    )
    document: str = "[Document](Title: {title}) {text}\n"
    query: str = "\nQuestion: {question}\n"
    postamble: str = "\n### Response:\n"

    @classmethod
    def load(cls, path: str | Path | None) -> "PromptTemplate":
        if path is None:
            text = resources.files("superprompt.data").joinpath("template_qa.json").read_text()
        else:
            text = Path(path).read_text()
        return cls(**json.loads(text))


def example_segments(
    example: RagExample, template: PromptTemplate | None = None
) -> tuple[TokenSegment, list[TokenSegment], TokenSegment, TokenSegment]:
    """Render one example into (preamble, documents, query, postamble)."""
    tpl = template or PromptTemplate()
    preamble = TokenSegment("preamble", encode_text(tpl.preamble), "preamble")
    documents = [
        TokenSegment(
            f"doc{i}",
            encode_text(tpl.document.format(title=c.get("title", ""), text=c.get("text", ""))),
            "document",
        )
        for i, c in enumerate(example.contexts)
    ]
    query = TokenSegment("query", encode_text(tpl.query.format(question=example.question)), "query")
    postamble = TokenSegment("postamble", encode_text(tpl.postamble), "postamble")
    return preamble, documents, query, postamble
