import json

import numpy as np
import pytest

from owsm_kit.bpe import BpeModel
from owsm_kit.cli import build_parser, main
from owsm_kit.decoding import LogProbLattice, scripted_scorer
from owsm_kit.tokens import Vocabulary, encode_record

from conftest import scenario_90s


@pytest.fixture
def vocab_file(tmp_path, vocab):
    path = tmp_path / "vocab.txt"
    vocab.save(path)
    return path


def write_manifest(path, talks=3, seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    for k in range(talks):
        t = 0.0
        for i in range(15):
            t += float(rng.uniform(0.2, 1.5))
            d = float(rng.uniform(1, 9))
            rows.append({"talk_id": f"talk{k}", "start": round(t, 2), "end": round(t + d, 2),
                         "text": "the cat sat on the mat " + "and the dog " * (i % 3), "language": "en",
                         "corpus": "ted" if k < 2 else "other", "translations": {"de": "the cat"}})
            t += d
    # one segment longer than the window limit
    rows.append({"talk_id": "long", "start": 0.0, "end": 40.0, "text": "the dog", "language": "en", "id": "long-0"})
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return rows


def test_help_shows_defaults(capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args(["decode", "--help"])
    out = capsys.readouterr().out
    assert "default 10" in out and "default 0.3" in out and "default joint" in out


def test_vocab_build_and_bpe_train(tmp_path):
    texts = tmp_path / "t.txt"
    texts.write_text("the cat sat\nthe dog sat\n\nthe cat ran\n")
    model = tmp_path / "bpe.txt"
    assert main(["bpe-train", "--texts", str(texts), "--vocab-size", "20", "--out", str(model)]) == 0
    pieces = BpeModel.load(model).pieces
    assert len(pieces) == 20
    out = tmp_path / "vocab.txt"
    assert main(["vocab-build", "--pieces", str(model), "--languages", "en,de", "--st-targets", "de", "--out", str(out)]) == 0
    v = Vocabulary.load(out)
    assert list(v.pieces) == list(pieces) and list(v.languages) == ["en", "de"]


def test_tokenize_detokenize_round_trip(tmp_path, vocab_file, talk_record, capsys):
    recs = tmp_path / "r.jsonl"
    recs.write_text(json.dumps(talk_record.to_json()) + "\n")
    ids = tmp_path / "ids.jsonl"
    assert main(["tokenize", "--vocab", str(vocab_file), "--input", str(recs), "--output", str(ids)]) == 0
    back = tmp_path / "back.jsonl"
    assert main(["detokenize", "--vocab", str(vocab_file), "--input", str(ids), "--output", str(back)]) == 0
    assert json.loads(back.read_text()) == talk_record.to_json()
    assert main(["detokenize", "--vocab", str(vocab_file), "--input", str(ids), "--render"]) == 0
    assert "<0.00>I'm going" in capsys.readouterr().out


def run_prepare(tmp_path, manifest, vocab_file, name, *extra):
    out = tmp_path / name
    argv = ["prepare", "--manifest", str(manifest), "--vocab", str(vocab_file), "--out-dir", str(out), *extra]
    assert main(argv) == 0
    return out


def test_prepare_report_and_determinism(tmp_path, vocab_file):
    manifest = tmp_path / "m.jsonl"
    rows = write_manifest(manifest)
    a = run_prepare(tmp_path, manifest, vocab_file, "a", "--figures", str(tmp_path / "fig"))
    b = run_prepare(tmp_path, manifest, vocab_file, "b", "--jobs", "2")
    for name in [f"shard-{k:03}.jsonl" for k in range(5)] + ["samples.tsv"]:
        assert (a / name).read_bytes() == (b / name).read_bytes()
    report = json.loads((a / "report.json").read_text())
    assert report["segments_total"] == report["segments_covered"] == len(rows)
    assert report["oversized"] == len(report["oversized_samples"]) == 1
    sizes = report["shard_sizes"]
    assert max(sizes) - min(sizes) <= 1 and sum(sizes) == report["kept"]
    assert set(report["per_corpus"]) == {"ted", "other", "default"}
    assert (tmp_path / "fig" / "prepare.png").stat().st_size > 0
    samples = [json.loads(line) for k in range(5) for line in (a / f"shard-{k:03}.jsonl").read_text().splitlines()]
    assert all(s["duration"] <= 30.0 for s in samples)


def test_prepare_translations(tmp_path, vocab_file):
    manifest = tmp_path / "m.jsonl"
    write_manifest(manifest)
    out = run_prepare(tmp_path, manifest, vocab_file, "st", "--with-translations", "--n-shards", "6")
    report = json.loads((out / "report.json").read_text())
    assert report["kept"] > report["segments_covered"] / 15
    assert len(report["shard_sizes"]) == 6


def test_config_precedence(tmp_path, vocab_file, monkeypatch):
    manifest = tmp_path / "m.jsonl"
    write_manifest(manifest)
    cfg = tmp_path / "c.yaml"
    cfg.write_text(f"manifest: {manifest}\nvocab: {vocab_file}\nn_shards: 7\nseed: 3\n")
    out = tmp_path / "p"
    monkeypatch.setenv("OWSM_KIT_SEED", "11")
    assert main(["prepare", "--config", str(cfg), "--out-dir", str(out), "--n-shards", "6"]) == 0
    used = json.loads((out / "report.json").read_text())["config"]
    assert used["n_shards"] == 6 and used["seed"] == 3
    cfg.write_text(f"manifest: {manifest}\nvocab: {vocab_file}\n")
    out2 = tmp_path / "q"
    assert main(["prepare", "--config", str(cfg), "--out-dir", str(out2)]) == 0
    assert json.loads((out2 / "report.json").read_text())["config"]["seed"] == 11


@pytest.mark.parametrize("content", ["n_shards: 0\n", "beam_size: [1]\n", "frobnicate: 1\n", "n_shards: many\n"])
def test_invalid_config_fails_cleanly(tmp_path, vocab_file, content, capsys):
    manifest = tmp_path / "m.jsonl"
    write_manifest(manifest)
    cfg = tmp_path / "bad.yaml"
    cfg.write_text(content)
    out = tmp_path / "never"
    argv = ["prepare", "--config", str(cfg), "--manifest", str(manifest), "--vocab", str(vocab_file), "--out-dir", str(out)]
    assert main(argv) != 0
    assert "error" in capsys.readouterr().err
    assert not out.exists()


def test_bad_seed_env(tmp_path, vocab_file, monkeypatch):
    manifest = tmp_path / "m.jsonl"
    write_manifest(manifest)
    monkeypatch.setenv("OWSM_KIT_SEED", "abc")
    assert main(["prepare", "--manifest", str(manifest), "--vocab", str(vocab_file), "--out-dir", str(tmp_path / "x")]) == 1


def test_decode_ctc_on_one_hot_lattice(tmp_path, capsys):
    lat = LogProbLattice.one_hot([1, 1, 0, 2, 2, 0, 2], 4, 0)
    path = tmp_path / "l.json"
    path.write_text(json.dumps(lat.to_json()))
    assert main(["decode", "--lattice", str(path), "--algorithm", "ctc"]) == 0
    assert json.loads(capsys.readouterr().out)["tokens"] == [1, 2, 2]


def test_decode_joint_weight_zero_is_attention(tmp_path, vocab, capsys):
    V = len(vocab)
    context = [vocab.sos, vocab.lang_id("en"), vocab.asr]
    body = [vocab.timestamp_id(0)] + vocab.encode_text("the cat") + [vocab.timestamp_id(100)]
    lat = LogProbLattice.one_hot(sum(([t, vocab.blank_id] for t in body if vocab.is_piece(t)), []) * 2, V, vocab.blank_id, 0.9)
    scorer = scripted_scorer(context[1:] + body, V, vocab.eos, strip_through=vocab.sos)
    vf, lf, sf = tmp_path / "v.txt", tmp_path / "l.bin", tmp_path / "s.json"
    vocab.save(vf)
    lf.write_bytes(lat.to_bytes())
    sf.write_text(json.dumps(scorer.to_json()))
    common = ["decode", "--lattice", str(lf), "--scorer", str(sf), "--vocab", str(vf)]
    assert main(common + ["--algorithm", "attention"]) == 0
    att = json.loads(capsys.readouterr().out)
    assert main(common + ["--algorithm", "joint", "--ctc-weight", "0", "--beam", "1"]) == 0
    joint = json.loads(capsys.readouterr().out)
    assert joint["tokens"] == att["tokens"] == body
    assert att["record"]["segments"] == [[0.0, "the cat", 2.0]]
    out = tmp_path / "all.json"
    assert main(common + ["--algorithm", "all", "--output", str(out), "--figures", str(tmp_path / "f")]) == 0
    assert [r["algorithm"] for r in json.loads(out.read_text())] == ["ctc", "attention", "joint"]
    assert (tmp_path / "f" / "decoding.png").exists()


def test_decode_needs_eos(tmp_path, capsys):
    path = tmp_path / "l.json"
    path.write_text(json.dumps(LogProbLattice.one_hot([1], 3, 0).to_json()))
    assert main(["decode", "--lattice", str(path), "--algorithm", "joint"]) == 1


def test_transcribe(tmp_path, pieces, capsys):
    scenario = tmp_path / "scenario.json"
    obj = scenario_90s(pieces)
    scenario.write_text(json.dumps(obj))
    out = tmp_path / "segs.jsonl"
    argv = ["transcribe", "--scenario", str(scenario), "--output", str(out), "--figures", str(tmp_path / "f")]
    assert main(argv) == 0
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    assert " ".join(r["text"] for r in rows) == obj["expected_text"]
    trace = json.loads((tmp_path / "segs.jsonl.trace.json").read_text())
    assert trace["cursors"][:3] == [0.0, 28.52, 57.52]
    assert (tmp_path / "f" / "longform.png").exists()


def test_score(tmp_path, capsys):
    refs, hyps = tmp_path / "r.txt", tmp_path / "h.txt"
    refs.write_text("The cat sat.\nHello world\n")
    hyps.write_text("the cat sit\nhello world\n")
    tsv, fig = tmp_path / "u.tsv", tmp_path / "f"
    assert main(["score", "--refs", str(refs), "--hyps", str(hyps), "--tsv", str(tsv), "--figures", str(fig)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["score"] == pytest.approx(1 / 5)
    assert report["per_utterance"][0]["rate"] == pytest.approx(1 / 3)
    assert tsv.read_text().startswith("id\trate")
    assert (fig / "wer.png").exists()
    # every sentence shorter than four words: no 4-gram, so corpus BLEU is 0
    assert main(["score", "--refs", str(refs), "--hyps", str(refs), "--metric", "bleu"]) == 0
    assert json.loads(capsys.readouterr().out)["score"] == 0.0
    refs.write_text("the cat sat on the mat\nthere is a dog here\n")
    assert main(["score", "--refs", str(refs), "--hyps", str(refs), "--metric", "bleu"]) == 0
    assert json.loads(capsys.readouterr().out)["score"] == pytest.approx(100.0)


def test_score_jsonl_by_id(tmp_path, capsys):
    refs, hyps = tmp_path / "r.jsonl", tmp_path / "h.jsonl"
    refs.write_text('{"id": "a", "text": "en"}\n{"id": "b", "text": "de"}\n')
    hyps.write_text('{"id": "b", "text": "de"}\n{"id": "a", "text": "ja"}\n')
    assert main(["score", "--refs", str(refs), "--hyps", str(hyps), "--metric", "lid"]) == 0
    assert json.loads(capsys.readouterr().out)["score"] == 0.5
    hyps.write_text('{"id": "b", "text": "de"}\n{"id": "c", "text": "ja"}\n')
    assert main(["score", "--refs", str(refs), "--hyps", str(hyps), "--metric", "lid"]) == 1


def test_features_and_cmvn(tmp_path):
    import wave

    rng = np.random.default_rng(0)
    paths = []
    for i in range(2):
        wav = tmp_path / f"{i}.wav"
        with wave.open(str(wav), "wb") as w:
            w.setnchannels(1)
            w.setsampwidth(2)
            w.setframerate(16000)
            w.writeframes((rng.normal(size=16000) * 3000).astype("<i2").tobytes())
        out = tmp_path / f"{i}.json"
        assert main(["features", "--wav", str(wav), "--out", str(out)]) == 0
        paths.append(str(out))
    stats = tmp_path / "cmvn.json"
    assert main(["cmvn", "--out", str(stats), *paths]) == 0
    red = tmp_path / "r.bin"
    argv = ["features", "--wav", str(tmp_path / "0.wav"), "--out", str(red), "--binary", "--cmvn", str(stats),
            "--spec-augment", "--reduce", "--seed", "5"]
    assert main(argv) == 0
    from owsm_kit.features import FeatureMatrix

    assert FeatureMatrix.load(red).frames.shape == (24, 320)
    # the binary layout has no frame_shift field; JSON keeps it
    js = tmp_path / "r.json"
    assert main(["features", "--wav", str(tmp_path / "0.wav"), "--out", str(js), "--reduce"]) == 0
    assert FeatureMatrix.load(js).frame_shift == pytest.approx(0.04)
