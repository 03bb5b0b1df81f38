"""``cipherner`` command line.

Exit codes: 0 success, 2 usage, 3 data or validation error, 4 access denied
or authentication failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import shutil
import sys
import tempfile
from importlib import resources
from pathlib import Path

from . import abe
from .cipher import (Base64Error, CipherError, EncryptedBundle, build_codebook, decrypt_bundle,
                     encrypt_corpus, encrypt_tokens, load_codebook, parse_scheme)
from .corpus import (ConfigInvalid, Corpus, CorpusError, Vocabulary, read_conll_file, split,
                     synth_config_from_kv, parse_kv, generate_synthetic, write_conll_file)
from .experiment import ParityConfig, run_parity, run_parity_seeds
from .ner import TrainConfig, TrainedModel, evaluate, predict, train
from .nn import NNError

log = logging.getLogger("cipherner")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DENIED = 0, 2, 3, 4
SEED_ENV = "CIPHERNER_SEED"


class UsageError(Exception):
    pass


def default_parity_config() -> Path:
    return Path(str(resources.files("cipherner") / "data" / "parity.cfg"))


def _seed(args, default: int | None = 0) -> int | None:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            value = int(env, 0)
        except ValueError:
            raise UsageError(f"{SEED_ENV}={env!r} is not an integer") from None
        if not 0 <= value < 2 ** 64:
            raise UsageError(f"{SEED_ENV} must be a u64")
        return value
    return default


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be in [0, 2^64)")
    return value


def _read_kv(path) -> dict[str, str]:
    if path is None:
        return {}
    return parse_kv(Path(path).read_text(encoding="utf-8"))


def _load_data(path) -> Corpus | EncryptedBundle:
    """A CoNLL file or a bundle directory (text1.txt, text2.txt, text3.txt)."""
    p = Path(path)
    if p.is_dir():
        return EncryptedBundle.read(p)
    return read_conll_file(p)


def _scheme(args):
    return parse_scheme(args.scheme, passthrough=getattr(args, "passthrough", False))


def _write_atomic_dir(out_dir: Path, files: dict[str, bytes]) -> None:
    """Materialise ``files`` under ``out_dir`` all at once or not at all."""
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".partial-", dir=out_dir.parent))
    try:
        for name, data in files.items():
            (tmp / name).write_bytes(data)
        out_dir.mkdir(exist_ok=True)
        for name in files:
            os.replace(tmp / name, out_dir / name)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args) -> int:
    kv = _read_kv(args.config)
    synth, file_seed = synth_config_from_kv(kv)
    seed = _seed(args, file_seed if file_seed is not None else 0)
    corpus = generate_synthetic(synth, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_conll_file(corpus, out / "corpus.conll")
    written = ["corpus.conll"]
    if args.split:
        ratios = tuple(float(x) for x in args.split.split(","))
        if len(ratios) != 3:
            raise UsageError("--split takes three comma-separated ratios")
        for name, part in zip(("train", "dev", "test"), split(corpus, ratios, seed)):
            write_conll_file(part, out / f"{name}.conll")
            written.append(f"{name}.conll")
    print(f"sentences={len(corpus.sentences)} seed={seed} files={','.join(written)}")
    return EXIT_OK


def cmd_encrypt(args) -> int:
    corpora = [read_conll_file(p) for p in args.inputs]
    out = Path(args.out)
    if args.codebook:
        codebook = load_codebook(args.codebook)
    else:
        if not args.scheme:
            raise UsageError("encrypt needs --scheme or --codebook")
        seqs = [s for c in corpora for s in c.token_sequences]
        codebook = build_codebook(Vocabulary.from_sequences(seqs, "first"), _scheme(args))
        out.mkdir(parents=True, exist_ok=True)
        codebook.save(out / "codebook.txt")
    for path, corpus in zip(args.inputs, corpora):
        bundle = encrypt_corpus(corpus, codebook)
        bundle.write(out / Path(path).stem)
    print(f"scheme={codebook.scheme.spec} fingerprint={codebook.fingerprint.hex()} "
          f"bundles={len(corpora)}")
    return EXIT_OK


def cmd_decrypt(args) -> int:
    codebook = load_codebook(args.codebook)
    corpus = decrypt_bundle(EncryptedBundle.read(args.bundle), codebook)
    write_conll_file(corpus, args.out)
    print(f"sentences={len(corpus.sentences)}")
    return EXIT_OK


def cmd_abe_setup(args) -> int:
    pk, mk = abe.setup(_seed(args, None))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    abe.save_key(pk, out / "pk.key")
    abe.save_key(mk, out / "mk.key")
    print(f"system_id={pk.system_id.hex()}")
    return EXIT_OK


def _system_keys(keys_dir):
    d = Path(keys_dir)
    return abe.read_key(d / "pk.key"), abe.read_key(d / "mk.key")


def cmd_abe_keygen(args) -> int:
    pk, mk = _system_keys(args.keys)
    attrs = [a.strip() for a in args.attrs.split(",") if a.strip()]
    sk = abe.keygen(pk, mk, args.user, attrs)
    abe.save_key(sk, args.out)
    print(f"user={sk.user_id} attributes={','.join(sorted(sk.attributes))}")
    return EXIT_OK


def cmd_abe_encrypt(args) -> int:
    pk, mk = _system_keys(args.keys)
    ct = abe.encrypt(pk, mk, Path(args.input).read_bytes(), args.policy, _seed(args, None))
    Path(args.out).write_bytes(ct.to_bytes())
    print(f"policy={ct.policy}")
    return EXIT_OK


def cmd_abe_decrypt(args) -> int:
    ct = abe.AbeCiphertext.from_bytes(Path(args.input).read_bytes())
    payload = abe.decrypt(ct, abe.read_key(args.sk))
    _write_atomic_dir(Path(args.out).parent, {Path(args.out).name: payload})
    print(f"bytes={len(payload)}")
    return EXIT_OK


def cmd_provide(args) -> int:
    """CoNLL -> codebook + bundle -> ABE envelope."""
    corpus = read_conll_file(args.corpus)
    codebook = build_codebook(Vocabulary.from_corpus(corpus, "first"), _scheme(args))
    bundle = encrypt_corpus(corpus, codebook)
    pk, mk = _system_keys(args.keys)
    ct = abe.encrypt(pk, mk, bundle.pack(), args.policy, _seed(args, None))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    codebook.save(out / "codebook.txt")
    (out / "bundle.abe").write_bytes(ct.to_bytes())
    print(f"scheme={codebook.scheme.spec} policy={ct.policy} "
          f"fingerprint={codebook.fingerprint.hex()}")
    return EXIT_OK


def cmd_consume(args) -> int:
    """ABE envelope + user key -> text1/2/3 (nothing is written on failure)."""
    ct = abe.AbeCiphertext.from_bytes(Path(args.ciphertext).read_bytes())
    bundle = EncryptedBundle.unpack(abe.decrypt(ct, abe.read_key(args.sk)))
    bundle.validate()
    files = {k: v.encode("utf-8") for k, v in bundle.file_texts().items()}
    _write_atomic_dir(Path(args.out), files)
    print(f"sentences={len(bundle.text1)} fingerprint={bundle.codebook_fingerprint.hex()}")
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    kv = _read_kv(args.config)
    file_seed = int(kv["seed"]) if "seed" in kv else 0
    return TrainConfig.from_kv(kv, seed=_seed(args, file_seed), vocab_mode=args.vocab_mode,
                               epochs=args.epochs)


def cmd_train(args) -> int:
    config = _train_config(args)
    data = _load_data(args.data)
    dev = _load_data(args.dev) if args.dev else None
    model = train(data, dev, config,
                  on_epoch=lambda e, nll: log.info("epoch %d nll %.6f", e, nll))
    model.save(args.out)
    print(f"epochs={model.epoch} final_nll={model.loss_history[-1]!r} seed={config.seed} "
          f"vocab={len(model.vocab)} tags={len(model.tagset)}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = TrainedModel.load(args.model)
    m = evaluate(model, _load_data(args.data))
    print(f"{'P':>8} {'R':>8} {'F1':>8} {'tp':>6} {'fp':>6} {'fn':>6}")
    print(f"{100 * m.precision:8.4f} {100 * m.recall:8.4f} {100 * m.f1:8.4f} "
          f"{m.tp:6d} {m.fp:6d} {m.fn:6d}")
    print()
    print(f"precision={m.precision!r}\nrecall={m.recall!r}\nf1={m.f1!r}\n"
          f"tp={m.tp}\nfp={m.fp}\nfn={m.fn}")
    return EXIT_OK


def cmd_predict(args) -> int:
    """Tag whitespace-separated sentences, one per line.

    With ``--codebook`` the input is plaintext and is encrypted with the
    provider's codebook before tagging; labels are printed next to the
    plaintext tokens.
    """
    model = TrainedModel.load(args.model)
    codebook = load_codebook(args.codebook) if args.codebook else None
    src = open(args.input, encoding="utf-8") if args.input else sys.stdin
    try:
        for line in src:
            tokens = line.split()
            if not tokens:
                continue
            seen = encrypt_tokens(tokens, codebook) if codebook else tokens
            labels = predict(model, seen)
            print("".join(f"{t}\t{lab}\n" for t, lab in zip(tokens, labels)))
    finally:
        if src is not sys.stdin:
            src.close()
    return EXIT_OK


def cmd_parity(args) -> int:
    from .report import plot_seed_deltas, render, write_report

    path = args.config or default_parity_config()
    base = ParityConfig.from_file(path, seed=_seed(args, None), vocab_mode=args.vocab_mode,
                                  epochs=args.epochs)

    def progress(name, row):
        print(f"# {name}: F1={100 * row.f1:.4f} ({row.seconds:.1f}s)", file=sys.stderr)

    out = Path(args.out)
    if args.seeds <= 1:
        report = run_parity(base, progress)
        write_report(report, out, figures=not args.no_figures)
        sys.stdout.write(render(report))
        return EXIT_OK
    seeds = [base.seed + i for i in range(args.seeds)]
    reports = run_parity_seeds(base, seeds, progress)
    for rep in reports:
        write_report(rep, out / f"seed_{rep.seed}", figures=not args.no_figures)
        sys.stdout.write(render(rep) + "\n")
    worst = max(r.max_abs_delta for r in reports)
    if not args.no_figures:
        plot_seed_deltas(reports, out)
    print(f"[summary]\nseeds={','.join(map(str, seeds))}\nmax_abs_delta_f1={worst!r}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cipherner", description="NER on per-token encrypted corpora with CP-ABE delivery.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text, parent=sub):
        p = parent.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(func=fn)
        return p

    def seed_flag(p):
        p.add_argument("--seed", type=_u64, help=f"u64 seed (falls back to ${SEED_ENV})")

    scheme_help = "identity | shift:K | affine:A:B | base64 | md5 | sha256b64"

    p = add("synth", cmd_synth, "generate a synthetic BIOES corpus")
    p.add_argument("--config", help="key=value file (n_sentences, entity_types, ...)")
    p.add_argument("--split", help="train,dev,test ratios, e.g. 0.8,0.1,0.1")
    p.add_argument("--out", required=True, help="output directory")
    seed_flag(p)

    p = add("encrypt", cmd_encrypt, "encrypt CoNLL files into Text1/Text2/Text3 bundles")
    p.add_argument("inputs", nargs="+", help="CoNLL files sharing one codebook")
    p.add_argument("--scheme", help=scheme_help)
    p.add_argument("--codebook", help="reuse an existing codebook instead of building one")
    p.add_argument("--passthrough", action="store_true",
                   help="leave characters outside the cipher alphabet unchanged")
    p.add_argument("--out", required=True, help="output directory")

    p = add("decrypt", cmd_decrypt, "decrypt a bundle directory back to CoNLL")
    p.add_argument("bundle", help="bundle directory")
    p.add_argument("--codebook", required=True)
    p.add_argument("--out", required=True, help="output CoNLL file")

    p_abe = add("abe", None, "CP-ABE key management and envelopes")
    abe_sub = p_abe.add_subparsers(dest="abe_command", required=True)
    p = add("setup", cmd_abe_setup, "create pk.key and mk.key", abe_sub)
    p.add_argument("--out", required=True, help="keys directory")
    seed_flag(p)
    p = add("keygen", cmd_abe_keygen, "issue a user secret key", abe_sub)
    p.add_argument("--keys", required=True, help="directory holding pk.key and mk.key")
    p.add_argument("--user", required=True)
    p.add_argument("--attrs", required=True, help="comma-separated attributes")
    p.add_argument("--out", required=True, help="secret key file")
    p = add("encrypt", cmd_abe_encrypt, "encrypt a file under an access policy", abe_sub)
    p.add_argument("--keys", required=True)
    p.add_argument("--policy", required=True, help='e.g. "(doctor AND cardiology) OR admin"')
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    seed_flag(p)
    p = add("decrypt", cmd_abe_decrypt, "decrypt an envelope with a user key", abe_sub)
    p.add_argument("--sk", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)

    p = add("provide", cmd_provide, "provider side: encrypt a corpus and wrap it with CP-ABE")
    p.add_argument("corpus", help="CoNLL file")
    p.add_argument("--scheme", required=True, help=scheme_help)
    p.add_argument("--passthrough", action="store_true")
    p.add_argument("--policy", required=True)
    p.add_argument("--keys", required=True, help="directory holding pk.key and mk.key")
    p.add_argument("--out", required=True, help="writes codebook.txt and bundle.abe")
    seed_flag(p)

    p = add("consume", cmd_consume, "user side: unwrap an envelope into text1/2/3 files")
    p.add_argument("ciphertext")
    p.add_argument("--sk", required=True)
    p.add_argument("--out", required=True, help="output directory")

    def train_flags(p):
        p.add_argument("--config", help="key=value training config")
        p.add_argument("--vocab-mode", choices=("first", "lex"))
        p.add_argument("--epochs", type=int)
        seed_flag(p)

    p = add("train", cmd_train, "train a BiLSTM-CRF on a CoNLL file or bundle directory")
    p.add_argument("data")
    p.add_argument("--dev", help="dev data for model selection (set dev_selection=true)")
    p.add_argument("--out", required=True, help="model directory")
    train_flags(p)

    p = add("eval", cmd_eval, "span-level micro P/R/F1 of a model on labelled data")
    p.add_argument("model")
    p.add_argument("data")

    p = add("predict", cmd_predict, "tag whitespace-separated sentences")
    p.add_argument("model")
    p.add_argument("--in", dest="input", help="input file (default stdin)")
    p.add_argument("--codebook", help="encrypt plaintext input with this codebook first")

    p = add("parity", cmd_parity, "plaintext vs four cipher variants on one split")
    p.add_argument("--out", default="parity_out", help="report and figure directory")
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    p.add_argument("--no-figures", action="store_true")
    train_flags(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"cipherner: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (abe.AccessDenied, abe.AuthenticationFailure) as exc:
        print(f"cipherner: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DENIED
    except (CorpusError, CipherError, Base64Error, abe.AbeError, NNError, ConfigInvalid,
            FloatingPointError, OSError, ValueError) as exc:
        print(f"cipherner: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
