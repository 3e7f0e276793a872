import http.server
import json
import math
import threading
import time
from datetime import datetime, timezone

import numpy as np
import pytest

from engage.convlog import ChatResponse, Conversation, Turn, extract_rows
from engage.errors import (
    BudgetMismatchError,
    DegenerateLabelsError,
    ModelFormatError,
    ScoreOutOfRangeError,
    ScorerTimeoutError,
    ScorerTransportError,
)
from engage.labeler import LabelStrategy, apply_strategy, render_context
from engage.reward import (
    FeaturizerConfig,
    RemoteScorer,
    TrainConfig,
    TrainedScorer,
    batch_loss_and_grad,
    evaluate,
    featurize,
    load_model,
    save_model,
    train,
)

START = datetime(2023, 1, 1, tzinfo=timezone.utc)
RETRY = LabelStrategy("retry")


def make_labeled(texts, labels, rows_per_conv=4):
    """Pack (response_text, label) pairs into conversations; labels are
    realized through the regenerated flag and the retry strategy."""
    out = []
    for start in range(0, len(texts), rows_per_conv):
        chunk = list(zip(texts[start:start + rows_per_conv],
                         labels[start:start + rows_per_conv]))
        turns = tuple(
            Turn(f"user message {i}", ChatResponse(text, regenerated=(label == 0)))
            for i, (text, label) in enumerate(chunk, start=1)
        )
        conv = Conversation(id=f"c{start}", user_id=f"u{start}", character_id="ch",
                            started_at=START, turns=turns)
        out.extend(apply_strategy(extract_rows(conv), RETRY))
    return out


def separable_dataset(n, seed, flip=0.0):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, n).tolist()
    texts = []
    for y in labels:
        word = "delight" if y else "tedium"
        texts.append(f"{word} filler{rng.integers(0, 50)}")
    if flip:
        labels = [1 - y if rng.random() < flip else y for y in labels]
    return make_labeled(texts, labels)


SMALL_FEATS = FeaturizerConfig(token_orders=(1, 2), char_orders=(), hash_dimension=1 << 12)


class TestFeaturize:
    def test_deterministic(self):
        a = featurize("hello there", "general kenobi", SMALL_FEATS)
        b = featurize("hello there", "general kenobi", SMALL_FEATS)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_ngram_count_oracle_distinct_tokens(self):
        # With all-distinct n-grams and a huge hash space, every bucket holds
        # exactly one count, so the normalized values are all 1/sqrt(m) where
        # m is the n-gram count computed by direct enumeration.
        cfg = FeaturizerConfig(token_orders=(1, 2, 3), char_orders=(4,),
                               hash_dimension=1 << 24)
        ctx = "alpha bravo charlie delta"
        rsp = "echo foxtrot golf"

        def count(text):
            toks = text.split()
            m = sum(max(0, len(toks) - n + 1) for n in (1, 2, 3))
            grams = {text[i:i + 4] for i in range(len(text) - 3)}
            assert len(grams) == len(text) - 3  # all distinct in this input
            return m + len(grams)

        m = count(ctx) + count(rsp)
        idx, val = featurize(ctx, rsp, cfg)
        assert len(idx) == m
        assert np.allclose(val, 1.0 / math.sqrt(m))
        assert math.isclose(float(val @ val), 1.0)

    def test_unit_norm(self):
        idx, val = featurize("a a a b", "c c d", SMALL_FEATS)
        assert math.isclose(float(val @ val), 1.0)

    def test_context_and_response_namespaces_differ(self):
        a = featurize("left", "right", SMALL_FEATS)
        b = featurize("right", "left", SMALL_FEATS)
        assert set(a[0].tolist()) != set(b[0].tolist())

    def test_seed_changes_hash_layout(self):
        other = FeaturizerConfig(token_orders=(1, 2), char_orders=(),
                                 hash_dimension=1 << 12, seed=7)
        a = featurize("same text", "same reply", SMALL_FEATS)
        b = featurize("same text", "same reply", other)
        assert set(a[0].tolist()) != set(b[0].tolist())

    def test_empty_inputs(self):
        idx, val = featurize("", "", SMALL_FEATS)
        assert idx.size == 0 and val.size == 0

    def test_config_validation(self):
        with pytest.raises(ValueError):
            FeaturizerConfig(hash_dimension=1000)
        with pytest.raises(ValueError):
            FeaturizerConfig(hash_dimension=3 << 10)
        with pytest.raises(ValueError):
            FeaturizerConfig(token_orders=(), char_orders=())


class TestGradient:
    def test_analytic_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        dim = 64
        feats = []
        for _ in range(12):
            k = rng.integers(2, 6)
            idx = rng.choice(dim, size=k, replace=False).astype(np.int64)
            val = rng.normal(size=k)
            val /= np.linalg.norm(val)
            feats.append((idx, val))
        labels = rng.integers(0, 2, 12).astype(float)
        w = rng.normal(scale=0.3, size=dim)
        b = 0.1
        l2 = 0.05
        loss, grad_w, grad_b = batch_loss_and_grad(w, b, feats, labels, l2)
        eps = 1e-6
        for j in rng.choice(dim, size=10, replace=False):
            wp, wm = w.copy(), w.copy()
            wp[j] += eps
            wm[j] -= eps
            num = (batch_loss_and_grad(wp, b, feats, labels, l2)[0]
                   - batch_loss_and_grad(wm, b, feats, labels, l2)[0]) / (2 * eps)
            assert math.isclose(grad_w[j], num, rel_tol=1e-4, abs_tol=1e-7)
        num_b = (batch_loss_and_grad(w, b + eps, feats, labels, l2)[0]
                 - batch_loss_and_grad(w, b - eps, feats, labels, l2)[0]) / (2 * eps)
        assert math.isclose(grad_b, num_b, rel_tol=1e-5, abs_tol=1e-8)


class TestTrain:
    def test_separable_data_learned(self):
        labeled = separable_dataset(240, seed=0)
        cfg = TrainConfig(featurizer=SMALL_FEATS, epochs=6, context_budget=8)
        model = train(labeled, cfg)
        report = evaluate(model, labeled)
        assert report["accuracy"] >= 0.97
        assert report["auc"] >= 0.99
        good = model.score("USER: hi", "delight filler1")
        bad = model.score("USER: hi", "tedium filler1")
        assert good > bad

    def test_deterministic_for_fixed_seed(self):
        labeled = separable_dataset(80, seed=1)
        cfg = TrainConfig(featurizer=SMALL_FEATS, epochs=3, context_budget=8, seed=5)
        m1 = train(labeled, cfg)
        m2 = train(labeled, cfg)
        assert np.array_equal(m1.weights, m2.weights)
        assert m1.bias == m2.bias
        assert m1.training_meta == m2.training_meta

    def test_chosen_epoch_minimizes_val_loss(self):
        labeled = separable_dataset(120, seed=2, flip=0.3)
        cfg = TrainConfig(featurizer=SMALL_FEATS, epochs=8, context_budget=8)
        model = train(labeled, cfg)
        losses = model.training_meta["val_loss_by_epoch"]
        assert len(losses) == 8
        assert model.training_meta["chosen_epoch"] == int(np.argmin(losses)) + 1

    def test_degenerate_labels(self):
        labeled = make_labeled(["x"] * 40, [1] * 40)
        with pytest.raises(DegenerateLabelsError):
            train(labeled, TrainConfig(featurizer=SMALL_FEATS, context_budget=8))

    def test_val_split_is_conversation_grouped(self):
        from engage.reward import _split_by_conversation

        labeled = separable_dataset(200, seed=4)
        tr, va = _split_by_conversation(labeled, 0.2, seed=0)
        tr_convs = {labeled[i].row.conversation_id for i in tr}
        va_convs = {labeled[i].row.conversation_id for i in va}
        assert tr_convs.isdisjoint(va_convs)
        assert len(tr) + len(va) == len(labeled)
        assert 0.15 <= len(va) / len(labeled) <= 0.3

    def test_train_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)
        with pytest.raises(ValueError):
            TrainConfig(val_fraction=1.5)
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0)

    def test_more_data_does_not_hurt(self):
        # noisy but learnable task: held-out accuracy should not degrade as
        # the training set grows
        holdout = separable_dataset(400, seed=99)
        accs = []
        for n in (100, 400, 1600):
            labeled = separable_dataset(n, seed=10, flip=0.25)
            cfg = TrainConfig(featurizer=SMALL_FEATS, epochs=4, context_budget=8,
                              learning_rate=0.3)
            model = train(labeled, cfg)
            accs.append(evaluate(model, holdout)["accuracy"])
        assert accs[2] >= accs[0] - 0.02
        assert accs[2] >= 0.9


class FixedScorer:
    def __init__(self, table):
        self.table = table

    def score(self, context_text, response_text):
        return self.table[response_text]

    context_budget = 8


class TestEvaluate:
    def test_auc_matches_pairwise_oracle(self):
        rng = np.random.default_rng(7)
        texts = [f"t{i}" for i in range(40)]
        labels = rng.integers(0, 2, 40).tolist()
        raw = rng.choice([0.1, 0.3, 0.5, 0.7, 0.9], size=40)  # deliberate ties
        table = dict(zip(texts, raw.tolist()))
        labeled = make_labeled(texts, labels)
        report = evaluate(FixedScorer(table), labeled, context_budget=8)

        scores = np.array([table[lr.row.response_text] for lr in labeled])
        y = np.array([lr.label for lr in labeled])
        pos = scores[y == 1]
        neg = scores[y == 0]
        wins = sum((p > q) + 0.5 * (p == q) for p in pos for q in neg)
        assert math.isclose(report["auc"], wins / (len(pos) * len(neg)))

    def test_single_class_auc_is_none(self):
        labeled = make_labeled(["a", "b"], [1, 1])
        report = evaluate(FixedScorer({"a": 0.6, "b": 0.55}), labeled,
                          context_budget=8)
        assert report["auc"] is None
        assert report["accuracy"] == 1.0

    def test_log_loss_finite_for_extreme_scores(self):
        labeled = make_labeled(["a", "b"], [1, 0])
        report = evaluate(FixedScorer({"a": 0.0, "b": 1.0}), labeled,
                          context_budget=8)
        assert math.isfinite(report["log_loss"])
        assert report["accuracy"] == 0.0


class TestPersistence:
    @pytest.fixture()
    def model(self):
        return train(separable_dataset(80, seed=3),
                     TrainConfig(featurizer=SMALL_FEATS, epochs=2, context_budget=8))

    def test_roundtrip(self, tmp_path, model):
        path = tmp_path / "m.npz"
        save_model(model, path)
        back = load_model(path)
        assert np.array_equal(back.weights, model.weights)
        assert back.bias == model.bias
        assert back.featurizer == model.featurizer
        assert back.training_meta == model.training_meta
        assert back.score("USER: hi", "delight") == model.score("USER: hi", "delight")

    def test_corrupt_file(self, tmp_path):
        path = tmp_path / "junk.npz"
        path.write_bytes(b"not a model at all")
        with pytest.raises(ModelFormatError):
            load_model(path)

    def test_version_mismatch(self, tmp_path, model):
        path = tmp_path / "m.npz"
        np.savez_compressed(
            path,
            format_version=np.int64(99),
            weights=model.weights,
            bias=np.float64(model.bias),
            featurizer=np.bytes_(json.dumps(model.featurizer.to_dict()).encode()),
            training_meta=np.bytes_(json.dumps(model.training_meta).encode()),
        )
        with pytest.raises(ModelFormatError, match="version"):
            load_model(path)

    def test_nonfinite_weights_rejected(self, tmp_path, model):
        path = tmp_path / "m.npz"
        bad = model.weights.copy()
        bad[0] = np.nan
        save_model(TrainedScorer(model.featurizer, bad, model.bias,
                                 model.training_meta), path)
        with pytest.raises(ModelFormatError):
            load_model(path)

    def test_budget_mismatch(self, model):
        with pytest.raises(BudgetMismatchError):
            model.check_budget(512)
        model.check_budget(8)
        model.check_budget(512, force=True)  # explicit override allowed


class _MockScorerHandler(http.server.BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        self.rfile.read(length)
        if self.path == "/ok":
            body = json.dumps({"score": 0.75}).encode()
            self.send_response(200)
        elif self.path == "/range":
            body = json.dumps({"score": 1.5}).encode()
            self.send_response(200)
        elif self.path == "/garbage":
            body = b"<html>oops</html>"
            self.send_response(200)
        elif self.path == "/slow":
            time.sleep(2.0)
            body = json.dumps({"score": 0.5}).encode()
            self.send_response(200)
        else:
            body = b"boom"
            self.send_response(500)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture(scope="module")
def mock_server():
    server = http.server.ThreadingHTTPServer(("127.0.0.1", 0), _MockScorerHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()


class TestRemoteScorer:
    def test_ok(self, mock_server):
        scorer = RemoteScorer(f"{mock_server}/ok")
        assert scorer.score("ctx", "rsp") == 0.75

    def test_http_error(self, mock_server):
        with pytest.raises(ScorerTransportError, match="500"):
            RemoteScorer(f"{mock_server}/err").score("c", "r")

    def test_out_of_range(self, mock_server):
        with pytest.raises(ScoreOutOfRangeError):
            RemoteScorer(f"{mock_server}/range").score("c", "r")

    def test_malformed_body(self, mock_server):
        with pytest.raises(ScorerTransportError, match="malformed"):
            RemoteScorer(f"{mock_server}/garbage").score("c", "r")

    def test_timeout(self, mock_server):
        with pytest.raises(ScorerTimeoutError):
            RemoteScorer(f"{mock_server}/slow", timeout_ms=200).score("c", "r")

    def test_connection_refused(self):
        with pytest.raises(ScorerTransportError):
            RemoteScorer("http://127.0.0.1:1/score", timeout_ms=500).score("c", "r")

    def test_bad_timeout(self):
        with pytest.raises(ValueError):
            RemoteScorer("http://x", timeout_ms=0)
