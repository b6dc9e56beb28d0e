from pathlib import Path

import pytest

from superprompt.dataset import PromptTemplate, RagExample, example_segments, ingest
from superprompt.errors import ParseError, SchemaError
from superprompt.model import decode_tokens

SAMPLE = Path(__file__).parent / "data" / "sample.jsonl"


class TestIngest:
    def test_parses_sample(self):
        examples = ingest(SAMPLE, seed=0)
        assert len(examples) == 3
        assert examples[0].question.startswith("where did they film")
        assert examples[0].answers == ["British Columbia"]
        assert len(examples[1].contexts) == 4

    def test_seed_determinism(self):
        a = ingest(SAMPLE, seed=7)
        b = ingest(SAMPLE, seed=7)
        for ea, eb in zip(a, b):
            assert [c["title"] for c in ea.contexts] == [c["title"] for c in eb.contexts]

    def test_seed_changes_order(self):
        orders = set()
        for seed in range(6):
            ex = ingest(SAMPLE, seed=seed)[1]
            orders.add(tuple(c["title"] for c in ex.contexts))
        assert len(orders) > 1

    def test_parse_error_carries_line(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"question": "q", "answers": ["a"], "ctxs": [{}]}\nnot json\n')
        with pytest.raises(ParseError) as err:
            ingest(bad)
        assert err.value.line == 2

    def test_schema_error_names_line(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"question": "q", "ctxs": [{"title": "t", "text": "x"}]}\n')
        with pytest.raises(SchemaError) as err:
            ingest(bad)
        assert err.value.line == 1
        assert "answers" in str(err.value)

    def test_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "sparse.jsonl"
        path.write_text(
            '\n{"question": "q", "answers": ["a"], "ctxs": [{"title": "t", "text": "x"}]}\n\n'
        )
        assert len(ingest(path)) == 1


class TestRagExample:
    def test_requires_answers_and_contexts(self):
        with pytest.raises(SchemaError):
            RagExample("q", [], [{"title": "t", "text": "x"}])
        with pytest.raises(SchemaError):
            RagExample("q", ["a"], [])


class TestTemplate:
    def test_default_structure(self):
        tpl = PromptTemplate()
        assert "### Instruction:" in tpl.preamble
        assert "[Document](Title: {title})" in tpl.document
        assert "### Response:" in tpl.postamble

    def test_load_default_file(self):
        assert PromptTemplate.load(None) == PromptTemplate()

    def test_load_custom(self, tmp_path):
        path = tmp_path / "tpl.json"
        path.write_text('{"preamble": "P", "document": "{title}:{text};", '
                        '"query": "Q {question}", "postamble": "R"}')
        tpl = PromptTemplate.load(path)
        assert tpl.preamble == "P"

    def test_example_segments_render(self):
        example = ingest(SAMPLE, seed=0)[0]
        p, docs, q, t = example_segments(example)
        assert p.kind == "preamble" and q.kind == "query"
        assert len(docs) == len(example.contexts)
        assert example.question in decode_tokens(q.tokens)
        assert "### Response:" in decode_tokens(t.tokens)
        for doc, ctx in zip(docs, example.contexts):
            assert ctx["text"] in decode_tokens(doc.tokens)
