import os
from pathlib import Path

import pytest

from cipherner.cli import default_parity_config, main
from cipherner.corpus import SynthConfig, generate_synthetic, parse_kv, read_conll_file, write_conll_file


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def workspace(tmp_path):
    assert run("synth", "--out", tmp_path / "d", "--split", "0.8,0.1,0.1", "--seed", 5) == 0
    assert run("abe", "setup", "--out", tmp_path / "keys", "--seed", 1) == 0
    assert run("abe", "keygen", "--keys", tmp_path / "keys", "--user", "ana",
               "--attrs", "doctor,cardio", "--out", tmp_path / "ana.sk") == 0
    assert run("abe", "keygen", "--keys", tmp_path / "keys", "--user", "bo",
               "--attrs", "nurse", "--out", tmp_path / "bo.sk") == 0
    return tmp_path


def test_help_for_every_subcommand(capsys):
    for cmd in (["synth"], ["encrypt"], ["decrypt"], ["abe", "setup"], ["abe", "keygen"],
                ["abe", "encrypt"], ["abe", "decrypt"], ["provide"], ["consume"], ["train"],
                ["eval"], ["predict"], ["parity"]):
        with pytest.raises(SystemExit) as info:
            main(cmd + ["--help"])
        assert info.value.code == 0
    assert "usage" in capsys.readouterr().out


def test_usage_errors():
    with pytest.raises(SystemExit) as info:
        main(["nonsense"])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        main(["train"])
    assert info.value.code == 2


def test_synth_is_deterministic(tmp_path):
    run("synth", "--out", tmp_path / "a", "--seed", 9)
    run("synth", "--out", tmp_path / "b", "--seed", 9)
    assert (tmp_path / "a/corpus.conll").read_bytes() == (tmp_path / "b/corpus.conll").read_bytes()


def test_seed_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("CIPHERNER_SEED", "9")
    run("synth", "--out", tmp_path / "env")
    monkeypatch.delenv("CIPHERNER_SEED")
    run("synth", "--out", tmp_path / "flag", "--seed", 9)
    assert (tmp_path / "env/corpus.conll").read_bytes() == (tmp_path / "flag/corpus.conll").read_bytes()
    monkeypatch.setenv("CIPHERNER_SEED", "x")
    assert run("synth", "--out", tmp_path / "bad") == 2


def test_encrypt_decrypt_round_trip(workspace):
    d = workspace / "d"
    assert run("encrypt", d / "train.conll", d / "test.conll", "--scheme", "affine:5:8",
               "--out", workspace / "enc") == 0
    assert run("decrypt", workspace / "enc/test", "--codebook", workspace / "enc/codebook.txt",
               "--out", workspace / "rt.conll") == 0
    assert (workspace / "rt.conll").read_bytes() == (d / "test.conll").read_bytes()


def test_encrypt_errors(workspace):
    d = workspace / "d"
    assert run("encrypt", d / "train.conll", "--out", workspace / "x") == 2
    assert run("encrypt", d / "train.conll", "--scheme", "rot13", "--out", workspace / "x") == 3
    bad = workspace / "latin.conll"
    bad.write_text("abc\tO\n\n")
    assert run("encrypt", bad, "--scheme", "shift:3", "--out", workspace / "y") == 3
    assert run("encrypt", bad, "--scheme", "shift:3", "--passthrough", "--out", workspace / "y") == 0
    assert run("encrypt", workspace / "missing.conll", "--scheme", "md5", "--out", workspace / "z") == 3


def test_provider_consumer_pipeline(workspace):
    d = workspace / "d"
    args = ("provide", d / "train.conll", "--scheme", "sha256b64", "--policy",
            "(doctor AND cardio) OR admin", "--keys", workspace / "keys", "--seed", 3)
    assert run(*args, "--out", workspace / "p1") == 0
    assert run(*args, "--out", workspace / "p2") == 0
    assert (workspace / "p1/bundle.abe").read_bytes() == (workspace / "p2/bundle.abe").read_bytes()

    assert run("consume", workspace / "p1/bundle.abe", "--sk", workspace / "ana.sk",
               "--out", workspace / "got") == 0
    assert run("encrypt", d / "train.conll", "--codebook", workspace / "p1/codebook.txt",
               "--out", workspace / "ref") == 0
    for name in ("text1.txt", "text2.txt", "text3.txt", "fingerprint.txt"):
        assert (workspace / "got" / name).read_bytes() == (workspace / "ref/train" / name).read_bytes()

    assert run("consume", workspace / "p1/bundle.abe", "--sk", workspace / "bo.sk",
               "--out", workspace / "denied") == 4
    assert not (workspace / "denied").exists()
    assert not list(workspace.glob(".partial-*"))

    blob = (workspace / "p1/bundle.abe").read_bytes()
    (workspace / "trunc.abe").write_bytes(blob[:len(blob) // 2])
    assert run("consume", workspace / "trunc.abe", "--sk", workspace / "ana.sk",
               "--out", workspace / "t") == 3
    tampered = bytearray(blob)
    tampered[-40] ^= 1  # last byte of payload_ct
    (workspace / "tamp.abe").write_bytes(bytes(tampered))
    assert run("consume", workspace / "tamp.abe", "--sk", workspace / "ana.sk",
               "--out", workspace / "t") == 4
    assert not (workspace / "t").exists()


def test_consume_line_counts_over_random_corpora(workspace):
    for seed in range(50):
        c = generate_synthetic(SynthConfig(n_sentences=1 + seed % 7, vocab_size=30, max_len=6), seed)
        path = workspace / f"c{seed}.conll"
        write_conll_file(c, path)
        assert run("provide", path, "--scheme", "md5", "--policy", "doctor",
                   "--keys", workspace / "keys", "--seed", seed, "--out", workspace / f"p{seed}") == 0
        out = workspace / f"o{seed}"
        assert run("consume", workspace / f"p{seed}/bundle.abe", "--sk", workspace / "ana.sk",
                   "--out", out) == 0
        n1 = len((out / "text1.txt").read_text().splitlines())
        assert n1 == len((out / "text3.txt").read_text().splitlines()) == len(c)


def test_abe_file_commands(workspace):
    src = workspace / "msg.bin"
    src.write_bytes(os.urandom(300))
    assert run("abe", "encrypt", "--keys", workspace / "keys", "--policy", "THRESHOLD(1, nurse, x)",
               "--in", src, "--out", workspace / "msg.abe", "--seed", 4) == 0
    assert run("abe", "decrypt", "--sk", workspace / "bo.sk", "--in", workspace / "msg.abe",
               "--out", workspace / "msg.out") == 0
    assert (workspace / "msg.out").read_bytes() == src.read_bytes()
    assert run("abe", "decrypt", "--sk", workspace / "ana.sk", "--in", workspace / "msg.abe",
               "--out", workspace / "msg2.out") == 4
    assert not (workspace / "msg2.out").exists()
    assert run("abe", "encrypt", "--keys", workspace / "keys", "--policy", "a AND",
               "--in", src, "--out", workspace / "bad.abe") == 3


def test_train_eval_predict(workspace, capsys):
    d = workspace / "d"
    assert run("encrypt", d / "train.conll", d / "test.conll", "--scheme", "md5",
               "--out", workspace / "enc") == 0
    assert run("train", workspace / "enc/train", "--out", workspace / "m", "--epochs", 2,
               "--seed", 0) == 0
    capsys.readouterr()
    assert run("eval", workspace / "m", workspace / "enc/test") == 0
    kv = parse_kv(capsys.readouterr().out.split("\n\n", 1)[1])
    assert 0.0 <= float(kv["f1"]) <= 1.0
    # plaintext test data does not match the ciphertext-trained model
    assert run("eval", workspace / "m", d / "test.conll") == 3
    sent = workspace / "in.txt"
    first = read_conll_file(d / "test.conll").token_sequences[0]
    sent.write_text(" ".join(first) + "\n")
    capsys.readouterr()
    assert run("predict", workspace / "m", "--in", sent, "--codebook",
               workspace / "enc/codebook.txt") == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if l]
    assert [l.split("\t")[0] for l in lines] == first


def test_bad_config_exit_code(workspace):
    cfg = workspace / "bad.cfg"
    cfg.write_text("epochs=zero\n")
    assert run("train", workspace / "d/train.conll", "--config", cfg, "--out", workspace / "m") == 3
    cfg.write_text("n_train=10\nn_test=0\n")
    assert run("parity", "--config", cfg, "--out", workspace / "par") == 3


def test_default_parity_config_matches_protocol():
    kv = parse_kv(Path(default_parity_config()).read_text())
    assert (kv["n_train"], kv["n_test"], kv["vocab_mode"]) == ("500", "100", "first")
    assert kv["entity_types"].count(",") == 3


def test_small_parity_run(tmp_path, capsys):
    cfg = tmp_path / "p.cfg"
    cfg.write_text("n_train=40\nn_test=10\nvocab_size=60\nmax_len=8\nembed_dim=6\n"
                   "hidden_dim=6\nepochs=2\nvocab_mode=first\n")
    assert run("parity", "--config", cfg, "--seed", 1, "--out", tmp_path / "out") == 0
    out = capsys.readouterr().out
    kv = parse_kv(out.split("[parity]\n", 1)[1])
    assert kv["identical_checkpoints"] == "true" and kv["max_abs_delta_f1"] == "0.0"
    assert [kv[f"row.{n}.delta_f1"] for n in ("plaintext", "shift", "base64", "md5", "sha256b64")] \
        == ["0.0"] * 5
    for name in ("parity_report.txt", "parity_f1.png", "parity_loss.png"):
        assert (tmp_path / "out" / name).stat().st_size > 0
    lines = out.splitlines()
    assert lines[0].split()[:5] == ["variant", "scheme", "P", "R", "F1"]
    assert lines[2].startswith("plaintext")


def test_multi_seed_parity(tmp_path, capsys):
    cfg = tmp_path / "p.cfg"
    cfg.write_text("n_train=30\nn_test=10\nvocab_size=60\nmax_len=8\nembed_dim=4\n"
                   "hidden_dim=4\nepochs=1\n")
    assert run("parity", "--config", cfg, "--seeds", 2, "--vocab-mode", "lex",
               "--out", tmp_path / "out", "--seed", 3) == 0
    summary = parse_kv(capsys.readouterr().out.split("[summary]\n", 1)[1])
    assert summary["seeds"] == "3,4"
    assert (tmp_path / "out/seed_3/parity_report.txt").exists()
    assert (tmp_path / "out/parity_seed_deltas.png").exists()
