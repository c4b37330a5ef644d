import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quantitize import (
    AnnotatePolicy,
    AnnotationSet,
    ChatCompletionClient,
    CodingScheme,
    ConfigError,
    Corpus,
    DataError,
    DecodingControls,
    Level,
    MockModel,
    ModelReply,
    PromptTemplate,
    TransportError,
    Unit,
    Variable,
    annotate,
    extract_pairs,
    normalize_output,
)

SENTIMENT = Variable(
    "sentiment", "categorical", (Level("Positive"), Level("Negative"))
)
SCHEME = CodingScheme((SENTIMENT,))
TEMPLATE = PromptTemplate(
    "Classify the sentiment of the passage as Positive or Negative.\n\n{text}",
    "sentiment",
)


def make_corpus(n=20, seed=0):
    rng = np.random.default_rng(seed)
    units = []
    for i in range(n):
        gold = "Positive" if rng.random() < 0.5 else "Negative"
        units.append(
            Unit(
                id=f"u{i:03d}",
                text=f"passage number {i} with some filler words",
                gold={"sentiment": gold},
            )
        )
    return Corpus(tuple(units))


class TestNormalizeOutput:
    def test_exact_match(self):
        assert normalize_output("Positive", SENTIMENT) == "Positive"

    def test_case_and_punctuation(self):
        assert normalize_output('  "positive."  ', SENTIMENT) == "Positive"
        assert normalize_output("NEGATIVE!", SENTIMENT) == "Negative"

    def test_unique_prefix(self):
        assert normalize_output("pos", SENTIMENT) == "Positive"

    def test_ambiguous_prefix_unparseable(self):
        v = Variable("x", "categorical", (Level("Art"), Level("Artifact")))
        assert normalize_output("Ar", v) == "Unparseable"

    def test_garbage_unparseable(self):
        assert normalize_output("I cannot decide", SENTIMENT) == "Unparseable"
        assert normalize_output("", SENTIMENT) == "Unparseable"

    def test_numeric_variable_rejected(self):
        v = Variable("year", "numeric", ())
        with pytest.raises(ConfigError):
            normalize_output("1990", v)

    def test_curly_quotes_stripped(self):
        assert normalize_output("“Positive”", SENTIMENT) == "Positive"


class TestExtractPairs:
    def test_tab_separated_lines(self):
        pairs, skipped = extract_pairs("Alice\tBob\nCarol\tDave\n")
        assert pairs == {frozenset(("Alice", "Bob")),
                         frozenset(("Carol", "Dave"))}
        assert skipped == 0

    def test_malformed_lines_counted(self):
        pairs, skipped = extract_pairs("Alice Bob no tab\nCarol\tDave\n")
        assert len(pairs) == 1
        assert skipped == 1

    def test_self_pairs_and_stoplist_dropped(self):
        pairs, _ = extract_pairs("Alice\tAlice\nNarrator\tBob\n",
                                 stoplist=["narrator"])
        assert pairs == set()

    def test_unordered(self):
        a, _ = extract_pairs("Alice\tBob\n")
        b, _ = extract_pairs("Bob\tAlice\n")
        assert a == b

    def test_whitespace_collapsed(self):
        pairs, _ = extract_pairs("Mary   Anne\tBob\n")
        assert pairs == {frozenset(("Mary Anne", "Bob"))}


class TestDecodingControls:
    def test_classification_defaults(self):
        c = DecodingControls.for_variable(SENTIMENT)
        assert c.temperature == 0.0
        assert c.max_output_tokens == math.ceil(len("Positive") / 4)
        assert dict(c.label_bias) == {"Positive": 100, "Negative": 100}

    def test_negative_temperature_rejected(self):
        with pytest.raises(ConfigError):
            DecodingControls(temperature=-0.5)


class TestMockModel:
    def test_rules_mode_matches_keyword(self):
        mock = MockModel("rules", rules={"filler": "Positive"})
        reply = mock.send("passage with filler words",
                          DecodingControls(), unit_ids=["u1"])
        assert reply.kind == "text" and reply.content == "Positive"

    def test_identity_matrix_reproduces_gold(self):
        corpus = make_corpus(30)
        mock = MockModel.from_corpus(corpus, SENTIMENT, np.eye(2))
        result = annotate(corpus, TEMPLATE, mock, SCHEME)
        assert result.counts_by_status() == {"ok": 30}
        for u in corpus:
            assert result.record_for(u.id).label == u.gold["sentiment"]

    def test_corruption_rate_within_three_sigma(self):
        # 0.8/0.2 corruption over 2000 units: binomial oracle on the
        # number of labels that disagree with gold.
        n = 2000
        units = tuple(
            Unit(id=f"u{i:05d}", text="t", gold={"sentiment": "Positive"})
            for i in range(n)
        )
        corpus = Corpus(units)
        mock = MockModel.from_corpus(
            corpus, SENTIMENT, np.array([[0.8, 0.2], [0.2, 0.8]]), seed=7
        )
        result = annotate(corpus, TEMPLATE, mock, SCHEME)
        flipped = sum(
            1 for r in result.records if r.label != "Positive"
        )
        sd = math.sqrt(n * 0.8 * 0.2)
        assert abs(flipped - 0.2 * n) < 3 * sd

    def test_per_unit_stream_is_batch_invariant(self):
        corpus = make_corpus(24, seed=3)
        matrix = np.array([[0.7, 0.3], [0.3, 0.7]])
        single = annotate(
            corpus, TEMPLATE,
            MockModel.from_corpus(corpus, SENTIMENT, matrix, seed=1),
            SCHEME, policy=AnnotatePolicy(batch_size=1),
        )
        batched = annotate(
            corpus, TEMPLATE,
            MockModel.from_corpus(corpus, SENTIMENT, matrix, seed=1),
            SCHEME, policy=AnnotatePolicy(batch_size=4),
        )
        assert single.labels() == batched.labels()

    def test_parallel_schedule_is_invariant(self):
        corpus = make_corpus(24, seed=3)
        matrix = np.array([[0.7, 0.3], [0.3, 0.7]])
        serial = annotate(
            corpus, TEMPLATE,
            MockModel.from_corpus(corpus, SENTIMENT, matrix, seed=1),
            SCHEME, policy=AnnotatePolicy(batch_size=2, max_in_flight=1),
        )
        parallel = annotate(
            corpus, TEMPLATE,
            MockModel.from_corpus(corpus, SENTIMENT, matrix, seed=1),
            SCHEME, policy=AnnotatePolicy(batch_size=2, max_in_flight=4),
        )
        assert [r.to_dict() for r in serial.records] == \
            [r.to_dict() for r in parallel.records]

    def test_refusal_recorded_without_label(self):
        corpus = make_corpus(5)
        mock = MockModel.from_corpus(
            corpus, SENTIMENT, np.eye(2), refuse_units=["u002"]
        )
        result = annotate(corpus, TEMPLATE, mock, SCHEME)
        rec = result.record_for("u002")
        assert rec.status == "refused" and rec.label is None
        assert result.counts_by_status() == {"ok": 4, "refused": 1}

    def test_every_unit_gets_exactly_one_record(self):
        corpus = make_corpus(17)
        mock = MockModel.from_corpus(corpus, SENTIMENT, np.eye(2))
        result = annotate(corpus, TEMPLATE, mock, SCHEME,
                          policy=AnnotatePolicy(batch_size=5))
        assert sorted(r.unit_id for r in result.records) == \
            sorted(u.id for u in corpus)

    def test_gold_required(self):
        corpus = Corpus((Unit(id="a", text="x"),))
        with pytest.raises(ConfigError, match="gold"):
            MockModel.from_corpus(corpus, SENTIMENT, np.eye(2))

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=10, deadline=None)
    def test_same_seed_same_annotations(self, seed):
        corpus = make_corpus(10, seed=2)
        matrix = np.array([[0.6, 0.4], [0.4, 0.6]])
        a = annotate(corpus, TEMPLATE,
                     MockModel.from_corpus(corpus, SENTIMENT, matrix, seed=seed),
                     SCHEME)
        b = annotate(corpus, TEMPLATE,
                     MockModel.from_corpus(corpus, SENTIMENT, matrix, seed=seed),
                     SCHEME)
        assert a.labels() == b.labels()


class _FakeResponse:
    def __init__(self, status_code, payload=None, text=""):
        self.status_code = status_code
        self._payload = payload
        self.text = text or (json.dumps(payload) if payload else "")

    def json(self):
        if self._payload is None:
            raise ValueError("no json")
        return self._payload


class _FakeSession:
    """Scripted stand-in for requests.Session."""

    def __init__(self, responses):
        self.responses = list(responses)
        self.headers = {}
        self.calls = []

    def post(self, url, json=None, timeout=None):
        self.calls.append({"url": url, "json": json, "timeout": timeout})
        return self.responses.pop(0)


def ok_response(content):
    return _FakeResponse(
        200, {"choices": [{"message": {"content": content}}]}
    )


class TestChatCompletionClient:
    def test_missing_token_is_config_error(self, monkeypatch):
        monkeypatch.delenv("QUANTITIZE_API_TOKEN", raising=False)
        with pytest.raises(ConfigError, match="QUANTITIZE_API_TOKEN"):
            ChatCompletionClient("https://api.example", "m1")

    def test_wire_format(self, monkeypatch):
        monkeypatch.setenv("QUANTITIZE_API_TOKEN", "tok")
        session = _FakeSession([ok_response("Positive")])
        client = ChatCompletionClient("https://api.example/", "m1",
                                      session=session)
        controls = DecodingControls.for_variable(SENTIMENT)
        reply = client.send("hello", controls, unit_ids=["u1"])
        assert reply.kind == "text" and reply.content == "Positive"
        call = session.calls[0]
        assert call["url"] == "https://api.example/chat/completions"
        body = call["json"]
        assert body["model"] == "m1"
        assert body["messages"] == [{"role": "user", "content": "hello"}]
        assert body["temperature"] == 0.0
        assert body["max_tokens"] == 2
        assert body["logit_bias"] == {"Positive": 100, "Negative": 100}
        assert session.headers["Authorization"] == "Bearer tok"

    def test_server_errors_are_transport(self, monkeypatch):
        monkeypatch.setenv("QUANTITIZE_API_TOKEN", "tok")
        for code in (500, 503, 429):
            session = _FakeSession([_FakeResponse(code, text="oops")])
            client = ChatCompletionClient("https://api.example", "m1",
                                          session=session)
            reply = client.send("x", DecodingControls())
            assert reply.kind == "transport_error"
            assert str(code) in reply.content

    def test_client_errors_are_config(self, monkeypatch):
        monkeypatch.setenv("QUANTITIZE_API_TOKEN", "tok")
        session = _FakeSession([_FakeResponse(401, text="bad token")])
        client = ChatCompletionClient("https://api.example", "m1",
                                      session=session)
        with pytest.raises(ConfigError, match="401"):
            client.send("x", DecodingControls())

    def test_refusal_field_propagates(self, monkeypatch):
        monkeypatch.setenv("QUANTITIZE_API_TOKEN", "tok")
        session = _FakeSession([
            _FakeResponse(200, {"choices": [{"message": {
                "content": "", "refusal": "cannot help"}}]})
        ])
        client = ChatCompletionClient("https://api.example", "m1",
                                      session=session)
        reply = client.send("x", DecodingControls())
        assert reply.kind == "refusal" and reply.content == "cannot help"

    def test_retry_backoff_then_success(self, monkeypatch):
        monkeypatch.setenv("QUANTITIZE_API_TOKEN", "tok")
        corpus = Corpus((Unit(id="a", text="some text"),))
        session = _FakeSession([
            _FakeResponse(503, text="busy"),
            _FakeResponse(503, text="busy"),
            ok_response("Positive"),
        ])
        client = ChatCompletionClient("https://api.example", "m1",
                                      session=session)
        delays = []
        result = annotate(corpus, TEMPLATE, client, SCHEME,
                          policy=AnnotatePolicy(max_retries=3, backoff=0.5),
                          sleep=delays.append)
        rec = result.record_for("a")
        assert rec.status == "ok" and rec.attempts == 3
        assert delays == [0.5, 1.0]

    def test_retries_exhausted_marks_unparseable(self, monkeypatch):
        monkeypatch.setenv("QUANTITIZE_API_TOKEN", "tok")
        corpus = Corpus((Unit(id="a", text="some text"),))
        session = _FakeSession([_FakeResponse(503, text="busy")] * 4)
        client = ChatCompletionClient("https://api.example", "m1",
                                      session=session)
        result = annotate(corpus, TEMPLATE, client, SCHEME,
                          policy=AnnotatePolicy(max_retries=3),
                          sleep=lambda _: None)
        rec = result.record_for("a")
        assert rec.status == "unparseable"
        assert rec.attempts == 4


class TestAnnotationSet:
    def test_manifest_records_run_parameters(self):
        corpus = make_corpus(4)
        mock = MockModel.from_corpus(corpus, SENTIMENT, np.eye(2), seed=5)
        result = annotate(corpus, TEMPLATE, mock, SCHEME, seed=5,
                          policy=AnnotatePolicy(batch_size=2))
        m = result.manifest
        assert m["variable"] == "sentiment"
        assert m["model"] == mock.identifier
        assert m["policy"]["batch_size"] == 2
        assert m["seed"] == 5
        assert m["n_units"] == 4
        assert m["decoding"]["temperature"] == 0.0

    def test_save_load_round_trip(self, tmp_path):
        corpus = make_corpus(6)
        mock = MockModel.from_corpus(corpus, SENTIMENT, np.eye(2))
        result = annotate(corpus, TEMPLATE, mock, SCHEME)
        result.save(tmp_path / "ann.jsonl", tmp_path / "manifest.json")
        again = AnnotationSet.load(tmp_path / "ann.jsonl",
                                   tmp_path / "manifest.json")
        assert again.records == result.records
        assert again.manifest == result.manifest

    def test_duplicate_records_rejected(self):
        from quantitize import AnnotationRecord
        r = AnnotationRecord("u1", "sentiment", "Positive", "Positive", "ok", 1)
        with pytest.raises(DataError):
            AnnotationSet((r, r), {"x": 1})

    def test_unresolvable_placeholder_names_unit(self):
        corpus = Corpus((Unit(id="u9", text="x"),))
        bad = PromptTemplate("{text} {missing_field}", "sentiment")
        mock = MockModel("rules", rules={})
        with pytest.raises(DataError, match="u9"):
            annotate(corpus, bad, mock, SCHEME)
