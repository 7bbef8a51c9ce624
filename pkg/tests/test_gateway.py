"""CLI subcommands over a miniature corpus and the HTTP service endpoints,
including CLI/HTTP ranking agreement."""

import json
import subprocess
import sys

import pytest
from fastapi.testclient import TestClient

from echolex.cli import main
from echolex.service import ServiceConfig, create_app, load_snapshot


@pytest.fixture(scope="session")
def workspace(tmp_path_factory):
    """Synthesize, ingest, caption, featurize, train, embed, and index a
    small corpus once for every gateway test."""
    root = tmp_path_factory.mktemp("gateway")
    corpus = root / "corpus"
    run = root / "run"

    assert main(["synth", "--out-dir", str(corpus), "--species", "4",
                 "--clips", "6", "--seed", "11"]) == 0
    assert main(["ingest", "--manifest", str(corpus / "manifest.jsonl"),
                 "--source", "synthetic",
                 "--out", str(root / "normalized.jsonl"),
                 "--errors", str(root / "errors.jsonl"),
                 "--split", str(root / "split.json"),
                 "--min-count", "6", "--test-fraction", "0.25",
                 "--seed", "2"]) == 0
    assert main(["caption", "--manifest", str(root / "normalized.jsonl"),
                 "--out", str(root / "captions.jsonl"),
                 "--issues", str(root / "issues.jsonl")]) == 0
    assert main(["features", "--manifest", str(root / "normalized.jsonl"),
                 "--corpus-root", str(corpus),
                 "--out-dir", str(root / "features")]) == 0
    assert main(["train", "--clips", str(root / "features" / "clips.jsonl"),
                 "--captions", str(root / "captions.jsonl"),
                 "--out-dir", str(run), "--split", str(root / "split.json"),
                 "--epochs", "12", "--batch-size", "8", "--seed", "0"]) == 0
    assert main(["embed", "--clips", str(root / "features" / "clips.jsonl"),
                 "--checkpoint", str(run / "checkpoint.npz"),
                 "--out", str(root / "embeddings.bin")]) == 0
    assert main(["index", "--embeddings", str(root / "embeddings.bin"),
                 "--clips", str(root / "features" / "clips.jsonl"),
                 "--captions", str(root / "captions.jsonl"),
                 "--out", str(root / "index.bin")]) == 0
    return root


@pytest.fixture(scope="session")
def any_caption(workspace):
    line = (workspace / "captions.jsonl").read_text().splitlines()[0]
    return json.loads(line)["text"]


@pytest.fixture(scope="session")
def service_client(workspace):
    config = ServiceConfig(corpus_root=str(workspace / "features"),
                           index_path=str(workspace / "index.bin"),
                           checkpoint_path=str(workspace / "run" / "checkpoint.npz"))
    app = create_app(config, snapshot=load_snapshot(config))
    return TestClient(app)


class TestCliArtifacts:
    def test_artifacts_exist(self, workspace):
        for name in ["normalized.jsonl", "split.json", "captions.jsonl",
                     "embeddings.bin", "index.bin"]:
            assert (workspace / name).exists(), name
        assert (workspace / "run" / "loss_log.csv").exists()
        assert (workspace / "features" / "clips.jsonl").exists()

    def test_search_emits_ranked_tsv(self, workspace, any_caption, capsys):
        assert main(["search", "--index", str(workspace / "index.bin"),
                     "--checkpoint", str(workspace / "run" / "checkpoint.npz"),
                     "--query", any_caption, "--k", "5"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 5
        scores = []
        for rank, line in enumerate(lines, start=1):
            cells = line.split("\t")
            assert len(cells) == 4
            assert int(cells[0]) == rank
            scores.append(float(cells[1]))
        assert scores == sorted(scores, reverse=True)

    def test_eval_retrieval_reports_both_metrics(self, workspace, capsys):
        assert main(["eval", "retrieval",
                     "--index", str(workspace / "index.bin"),
                     "--checkpoint", str(workspace / "run" / "checkpoint.npz"),
                     "--test", str(workspace / "split.json")]) == 0
        report = json.loads(capsys.readouterr().out)
        names = {m["metricName"] for m in report["metrics"]}
        assert names == {"mAP@10", "precision@1"}
        assert report["queryCount"] > 0

    def test_eval_zeroshot_runs(self, workspace, capsys):
        assert main(["eval", "zeroshot",
                     "--index", str(workspace / "index.bin"),
                     "--checkpoint", str(workspace / "run" / "checkpoint.npz"),
                     "--test", str(workspace / "split.json")]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["metrics"][0]["metricName"] == "zeroShotAccuracy"
        assert 0.0 <= report["metrics"][0]["value"] <= 1.0

    def test_classify_clip_id(self, workspace, capsys):
        clips = [json.loads(line) for line in
                 (workspace / "features" / "clips.jsonl").read_text().splitlines()]
        target = clips[0]
        species = sorted({c["speciesCommon"] for c in clips})
        assert main(["classify",
                     "--checkpoint", str(workspace / "run" / "checkpoint.npz"),
                     "--index", str(workspace / "index.bin"),
                     "--clip-id", target["clipId"],
                     "--labels", ",".join(species),
                     "--template", "The sound of a {label}"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert len(payload["scores"]) == len(species)
        assert payload["argmaxLabel"] in species

    def test_unknown_subcommand_exits_nonzero_with_usage(self):
        proc = subprocess.run(
            [sys.executable, "-m", "echolex.cli", "frobnicate"],
            capture_output=True, text=True)
        assert proc.returncode != 0
        assert "usage" in proc.stderr.lower()

    def test_missing_file_yields_machine_readable_error(self, tmp_path, capsys):
        code = main(["search", "--index", str(tmp_path / "missing.bin"),
                     "--checkpoint", str(tmp_path / "nope.npz"),
                     "--query", "x"])
        assert code == 1
        err = capsys.readouterr().err.strip()
        payload = json.loads(err.splitlines()[-1])
        assert "error" in payload


class TestHttpService:
    def test_health(self, service_client):
        body = service_client.get("/v1/health").json()
        assert body["status"] == "ok"
        assert body["indexLoaded"] is True

    def test_search_contract(self, service_client, any_caption):
        resp = service_client.post("/v1/search",
                                   json={"text": any_caption, "k": 5})
        assert resp.status_code == 200
        results = resp.json()["results"]
        assert len(results) == 5
        scores = [r["score"] for r in results]
        assert scores == sorted(scores, reverse=True)
        first = results[0]
        assert set(first) == {"clipId", "score", "caption", "speciesCommon",
                              "audioUrl"}
        assert first["audioUrl"] == f"/v1/audio/{first['clipId']}"

    def test_search_repeat_is_byte_identical(self, service_client, any_caption):
        payload = {"text": any_caption, "k": 7}
        a = service_client.post("/v1/search", json=payload)
        b = service_client.post("/v1/search", json=payload)
        assert a.content == b.content

    def test_search_rejects_empty_query_and_bad_k(self, service_client):
        assert service_client.post("/v1/search",
                                   json={"text": "", "k": 5}).status_code == 400
        assert service_client.post("/v1/search",
                                   json={"text": "x", "k": 0}).status_code == 400
        assert service_client.post(
            "/v1/search", json={"text": "x", "k": "ten"}).status_code == 400

    def test_search_unloaded_index_is_503(self):
        app = create_app(ServiceConfig(), snapshot=None)
        client = TestClient(app)
        resp = client.post("/v1/search", json={"text": "x", "k": 1})
        assert resp.status_code == 503

    def test_classify_by_clip_id(self, service_client, workspace):
        clips = [json.loads(line) for line in
                 (workspace / "features" / "clips.jsonl").read_text().splitlines()]
        species = sorted({c["speciesCommon"] for c in clips})
        resp = service_client.post("/v1/classify", json={
            "clipId": clips[0]["clipId"],
            "labels": [f"The sound of a {s}" for s in species]})
        assert resp.status_code == 200
        body = resp.json()
        assert body["argmaxLabel"] in {f"The sound of a {s}" for s in species}
        assert len(body["scores"]) == len(species)
        assert all(-1.0 - 1e-6 <= s["score"] <= 1.0 + 1e-6
                   for s in body["scores"])

    def test_classify_errors(self, service_client):
        assert service_client.post(
            "/v1/classify",
            json={"clipId": "missing", "labels": ["x"]}).status_code == 404
        assert service_client.post(
            "/v1/classify", json={"clipId": "c", "labels": []}).status_code == 400

    def test_classify_uploaded_audio(self, service_client, workspace):
        import base64
        clips_dir = workspace / "features" / "clips"
        wav_bytes = next(clips_dir.glob("*.wav")).read_bytes()
        resp = service_client.post("/v1/classify", json={
            "audioBase64": base64.b64encode(wav_bytes).decode("ascii"),
            "labels": ["alpha", "beta"]})
        assert resp.status_code == 200

    def test_audio_streams_wav(self, service_client, workspace):
        clips = [json.loads(line) for line in
                 (workspace / "features" / "clips.jsonl").read_text().splitlines()]
        resp = service_client.get(f"/v1/audio/{clips[0]['clipId']}")
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "audio/wav"
        assert resp.content[:4] == b"RIFF"

    def test_audio_unknown_clip_is_404(self, service_client):
        assert service_client.get("/v1/audio/nope").status_code == 404

    def test_admin_reload(self, service_client):
        resp = service_client.post("/v1/admin/reload")
        assert resp.status_code == 200
        assert resp.json()["status"] == "reloaded"

    def test_cli_and_http_agree_on_ranking(self, service_client, workspace,
                                           any_caption, capsys):
        assert main(["search", "--index", str(workspace / "index.bin"),
                     "--checkpoint", str(workspace / "run" / "checkpoint.npz"),
                     "--query", any_caption, "--k", "6"]) == 0
        cli_lines = capsys.readouterr().out.strip().splitlines()
        cli_ranking = [(line.split("\t")[2], float(line.split("\t")[1]))
                       for line in cli_lines]
        resp = service_client.post("/v1/search",
                                   json={"text": any_caption, "k": 6})
        http_ranking = [(r["clipId"], r["score"])
                        for r in resp.json()["results"]]
        assert [cid for cid, _ in cli_ranking] == [cid for cid, _ in http_ranking]
        for (_, a), (_, b) in zip(cli_ranking, http_ranking):
            assert a == pytest.approx(b, abs=1e-6)


class TestServiceConfigFile:
    def test_json_config(self, tmp_path):
        path = tmp_path / "svc.json"
        path.write_text(json.dumps({"corpus_root": "/data", "port": 9000}),
                        encoding="utf-8")
        config = ServiceConfig.from_file(path)
        assert config.corpus_root == "/data"
        assert config.port == 9000

    def test_toml_config(self, tmp_path):
        path = tmp_path / "svc.toml"
        path.write_text('corpus_root = "/data"\nport = 9100\n',
                        encoding="utf-8")
        config = ServiceConfig.from_file(path)
        assert config.port == 9100

    def test_unknown_keys_rejected(self, tmp_path):
        path = tmp_path / "svc.json"
        path.write_text('{"bogus": 1}', encoding="utf-8")
        with pytest.raises(ValueError):
            ServiceConfig.from_file(path)

    def test_token_env_override(self, tmp_path, monkeypatch):
        path = tmp_path / "svc.json"
        path.write_text('{"caption_token": "from-file"}', encoding="utf-8")
        monkeypatch.setenv("ECHOLEX_CAPTION_TOKEN", "from-env")
        assert ServiceConfig.from_file(path).caption_token == "from-env"


@pytest.fixture(scope="session")
def chunked(tmp_path_factory):
    """Two recordings of one rare species: a 25 s recording (3 chunks) and a
    short one (1 clip)."""
    import numpy as np
    from echolex.audio import AudioClip, save_wav
    from echolex.ingest import Recording, write_normalized

    root = tmp_path_factory.mktemp("chunked")
    corpus = root / "corpus"
    (corpus / "audio").mkdir(parents=True)
    rate = 48_000
    t_long = np.arange(25 * rate) / rate
    save_wav(AudioClip(samples=0.4 * np.sin(2 * np.pi * 700 * t_long),
                       sample_rate=rate), corpus / "audio" / "long.wav")
    t_short = np.arange(4 * rate) / rate
    save_wav(AudioClip(samples=0.4 * np.sin(2 * np.pi * 700 * t_short),
                       sample_rate=rate), corpus / "audio" / "short.wav")
    records = [
        Recording(id="rare-long", source="synthetic",
                  species_common="Rare Piper", audio_path="audio/long.wav",
                  license="CC"),
        Recording(id="rare-short", source="synthetic",
                  species_common="Rare Piper", audio_path="audio/short.wav",
                  license="CC"),
    ]
    write_normalized(records, root / "normalized.jsonl")
    assert main(["caption", "--manifest", str(root / "normalized.jsonl"),
                 "--out", str(root / "captions.jsonl")]) == 0
    assert main(["features", "--manifest", str(root / "normalized.jsonl"),
                 "--corpus-root", str(corpus),
                 "--out-dir", str(root / "features")]) == 0
    return root


class TestChunkedCorpus:
    def test_rare_long_recording_yields_three_chunks(self, chunked):
        rows = [json.loads(line) for line in
                (chunked / "features" / "clips.jsonl").read_text().splitlines()]
        by_recording = {}
        for row in rows:
            by_recording.setdefault(row["recordingId"], []).append(row["clipId"])
        assert by_recording["rare-long"] == \
            ["rare-long", "rare-long~c1", "rare-long~c2"]
        assert by_recording["rare-short"] == ["rare-short"]

    def test_chunks_share_their_recording_captions(self, chunked):
        from echolex.cli import _recording_id
        rows = [json.loads(line) for line in
                (chunked / "features" / "clips.jsonl").read_text().splitlines()]
        caption_rows = [json.loads(line) for line in
                        (chunked / "captions.jsonl").read_text().splitlines()]
        by_recording = {}
        for cap in caption_rows:
            by_recording.setdefault(cap["recordingId"], []).append(cap["text"])
        for row in rows:
            rid = _recording_id(row["clipId"])
            assert by_recording[rid], row["clipId"]

    def test_chunked_clip_id_is_url_safe_through_audio_endpoint(self, chunked):
        assert main(["train", "--clips", str(chunked / "features" / "clips.jsonl"),
                     "--captions", str(chunked / "captions.jsonl"),
                     "--out-dir", str(chunked / "run"),
                     "--epochs", "1", "--batch-size", "2"]) == 0
        assert main(["embed", "--clips", str(chunked / "features" / "clips.jsonl"),
                     "--checkpoint", str(chunked / "run" / "checkpoint.npz"),
                     "--out", str(chunked / "embeddings.bin")]) == 0
        assert main(["index", "--embeddings", str(chunked / "embeddings.bin"),
                     "--clips", str(chunked / "features" / "clips.jsonl"),
                     "--captions", str(chunked / "captions.jsonl"),
                     "--out", str(chunked / "index.bin")]) == 0
        config = ServiceConfig(corpus_root=str(chunked / "features"),
                               index_path=str(chunked / "index.bin"),
                               checkpoint_path=str(chunked / "run" / "checkpoint.npz"))
        client = TestClient(create_app(config, snapshot=load_snapshot(config)))
        resp = client.get("/v1/audio/rare-long~c2")
        assert resp.status_code == 200
        assert resp.content[:4] == b"RIFF"
