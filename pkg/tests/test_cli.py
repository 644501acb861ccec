"""End-to-end command-line checks, run in-process through ``cli.main``."""

import pytest

from twigdb.cli import main
from twigdb.store import Store


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    fields = {}
    for line in out.splitlines():
        name, _, value = line.partition("=")
        fields[name] = value
    return code, fields


def test_populate_stats_and_replay_check(tmp_path, capsys):
    d = str(tmp_path / "db")
    code, fields = run_cli(
        capsys, "populate", "--dir", d, "--blocks", "3", "--txs", "200", "--seed", "1"
    )
    assert code == 0
    assert fields["block_height"] == "3"
    assert fields["ops"] == "600"
    root = fields["global_root"]

    code, fields = run_cli(capsys, "stats", "--dir", d)
    assert code == 0
    assert fields["global_root"] == root
    assert int(fields["shard0.next_id"]) >= 1202
    assert int(fields["counters.merkleization_reads"]) == 0

    code, fields = run_cli(capsys, "replay-check", "--dir", d)
    assert code == 0
    assert fields["recovery"] == "ok"
    assert fields["global_root"] == root
    assert fields["live_keys"] == "600"


def test_mixed_defaults_and_conflicting_config(tmp_path, capsys):
    d = str(tmp_path / "db")
    code, fields = run_cli(
        capsys,
        "mixed",
        "--dir",
        d,
        "--blocks",
        "2",
        "--txs",
        "100",
        "--warm-keys",
        "50",
        "--shard-bits",
        "2",
    )
    assert code == 0
    assert fields["block_height"] == "3"  # warm block + 2 mixed blocks

    code, fields = run_cli(capsys, "mixed", "--dir", d, "--shard-bits", "3")
    assert code == 2
    assert fields["error"] == "ConfigError"

    code, fields = run_cli(capsys, "mixed", "--dir", d, "--mix", "1,2,3")
    assert code == 2


def test_get_prove_verify_round_trip(tmp_path, capsys):
    d = str(tmp_path / "db")
    with Store.open(d) as store:
        store.apply_block([("create", b"\x01\x02", b"\xaa\xbb")])
        root = store.global_root.hex()

    code, fields = run_cli(capsys, "get", "--dir", d, "--key", "0102")
    assert code == 0 and fields["present"] == "true" and fields["value"] == "aabb"
    code, fields = run_cli(capsys, "get", "--dir", d, "--key", "03")
    assert code == 0 and fields["present"] == "false"

    proof_file = str(tmp_path / "p.bin")
    code, fields = run_cli(
        capsys, "prove", "--dir", d, "--key", "0102", "--out", proof_file
    )
    assert code == 0
    assert fields["self_check"] == "ok"
    assert fields["root"] == root

    code, fields = run_cli(
        capsys,
        "verify",
        "--proof",
        proof_file,
        "--root",
        root,
        "--key",
        "0102",
    )
    assert code == 0
    assert fields["ok"] == "true"
    assert fields["key_match"] == "true"
    assert fields["value"] == "aabb"

    # wrong root must be rejected with exit code 1
    code, fields = run_cli(
        capsys, "verify", "--proof", proof_file, "--root", "00" * 32
    )
    assert code == 1 and fields["ok"] == "false"

    # a proof for one key does not speak for another
    code, fields = run_cli(
        capsys, "verify", "--proof", proof_file, "--root", root, "--key", "03"
    )
    assert code == 1 and fields["key_match"] == "false"

    # flipped byte: either undecodable (2) or rejected (1)
    blob = bytearray(open(proof_file, "rb").read())
    blob[len(blob) // 2] ^= 0xFF
    broken = str(tmp_path / "broken.bin")
    open(broken, "wb").write(bytes(blob))
    code, fields = run_cli(capsys, "verify", "--proof", broken, "--root", root)
    assert code in (1, 2)


def test_historical_prove_and_exclusion(tmp_path, capsys):
    d = str(tmp_path / "db")
    with Store.open(d) as store:
        store.apply_block([("create", b"k", b"v1")])
        store.apply_block([("update", b"k", b"v2")])
        store.apply_block([("delete", b"k", None)])
        root = store.global_root.hex()

    code, fields = run_cli(
        capsys, "prove", "--dir", d, "--key", b"k".hex(), "--height", "2"
    )
    assert code == 0 and fields["present"] == "true"
    proof_hex = fields["proof"]
    code, fields = run_cli(
        capsys, "verify", "--proof-hex", proof_hex, "--root", root, "--key", b"k".hex()
    )
    assert code == 0
    assert fields["value"] == b"v2".hex()
    assert fields["height"] == "2"

    code, fields = run_cli(capsys, "prove", "--dir", d, "--key", b"k".hex())
    assert code == 0 and fields["present"] == "false"  # deleted -> exclusion


def test_usage_errors_exit_two(tmp_path, capsys):
    code, _ = run_cli(capsys, "definitely-not-a-command")
    assert code == 2
    code, fields = run_cli(
        capsys, "verify", "--proof-hex", "zz", "--root", "00" * 32
    )
    assert code == 2
