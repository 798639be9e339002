import subprocess
import sys

import pytest

from healthchain.cli import main

TABLE = {
    1: (110, 1, 1, 1, 1),
    1_000: (110_000, 1, 1, 1, 1),
    10_000: (1_100_000, 2, 1, 1, 1),
    50_000: (5_500_000, 10, 3, 2, 1),
    100_000: (11_000_000, 19, 6, 3, 1),
    200_000: (22_000_000, 37, 11, 6, 1),
    300_000: (33_000_000, 55, 16, 8, 2),
}


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def usage_code(capsys, *argv):
    with pytest.raises(SystemExit) as exc:
        main(list(argv))
    capsys.readouterr()
    return exc.value.code


def test_module_help():
    res = subprocess.run([sys.executable, "-m", "healthchain", "--help"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    for name in ("sweep", "capacity", "demo", "verify"):
        assert name in res.stdout


def test_sweep_default_rates(capsys):
    code, out, _ = run(capsys, "sweep", "--lambda-day", "10000000")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "seal_rate_tps,expected_unsealed,simulated_unsealed,seed"
    assert [l.split(",")[:2] for l in lines[1:]] == [
        ["7", "9395200"], ["25", "7840000"], ["50", "5680000"]]


def test_sweep_bitcoin_thirty_million(capsys):
    code, out, _ = run(capsys, "sweep", "--lambda-day", "30000000", "--mu", "7")
    row = out.splitlines()[1].split(",")
    assert code == 0 and row[1] == "29395200"
    assert abs(int(row[2]) - 29_395_200) <= 0.001 * 29_395_200


def test_sweep_reproducible_bytes(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (a, b):
        assert run(capsys, "sweep", "--lambda-day", "5e6", "--seed", "9", "--out", str(path))[0] == 0
    assert a.read_bytes() == b.read_bytes()


def test_sweep_missing_lambda(capsys):
    assert usage_code(capsys, "sweep") == 2


def test_sweep_bad_mu(capsys):
    assert usage_code(capsys, "sweep", "--lambda-day", "1e6", "--mu", "7,x") == 2
    assert usage_code(capsys, "sweep", "--lambda-day", "1e6", "--mu", "-1") == 2


def test_capacity_default_is_the_reference_table(capsys):
    code, out, _ = run(capsys, "capacity")
    assert code == 0
    lines = out.splitlines()
    assert lines[0].split() == ["patients", "tx_per_day", "bitcoin", "ethereum", "iota", "cardano"]
    got = {}
    for line in lines[1:]:
        cells = [int(c.replace(",", "")) for c in line.split()]
        got[cells[0]] = tuple(cells[1:])
    assert got == TABLE
    assert "33,000,000" in out


def test_capacity_one_chain(capsys):
    code, out, _ = run(capsys, "capacity", "--patients", "50000", "--chains", "bitcoin")
    assert code == 0
    assert out.splitlines()[1].split()[-1] == "10"


def test_capacity_custom_rate(capsys):
    code, out, _ = run(capsys, "capacity", "--patients", "300000", "--chains", "ethereum",
                       "--rate-per-patient", "55")
    assert code == 0 and out.splitlines()[1].split()[-1] == "8"
    code, out, _ = run(capsys, "capacity", "--patients", "50000", "--chains", "bitcoin",
                       "--rate-per-patient", "55")
    assert out.splitlines()[1].split()[-1] == "5"


def test_capacity_csv(tmp_path, capsys):
    path = tmp_path / "t.csv"
    assert run(capsys, "capacity", "--csv", str(path))[0] == 0
    lines = path.read_text().splitlines()
    assert lines[0] == "patients,tx_per_day,bitcoin,ethereum,iota,cardano"
    assert lines[-1] == "300000,33000000,55,16,8,2"


def test_capacity_bad_input(capsys):
    assert usage_code(capsys, "capacity", "--patients", "0") == 2
    assert usage_code(capsys, "capacity", "--chains", "dogecoin") == 2


def test_demo_is_byte_reproducible(capsys):
    first = run(capsys, "demo", "--txs", "200")
    second = run(capsys, "demo", "--txs", "200")
    assert first[0] == 0
    assert first == second
    assert "invariants: OK" in first[1]


def test_demo_then_verify(tmp_path, capsys):
    net = tmp_path / "net"
    assert run(capsys, "demo", "--txs", "150", "--out", str(net))[0] == 0
    code, out, _ = run(capsys, "verify", str(net))
    assert code == 0
    assert "mainchain.jsonl: OK" in out

    victim = net / "sidechains" / "patient-00001.jsonl"
    lines = victim.read_text().split("\n")
    lines[1] = lines[1].replace('"timestamp":', '"timestamp":1', 1)
    victim.write_text("\n".join(lines))
    code, out, _ = run(capsys, "verify", str(net))
    assert code == 1
    assert "patient-00001.jsonl: FAIL" in out

    assert run(capsys, "verify", str(net / "mainchain.jsonl"))[0] == 0


def test_verify_missing_path(tmp_path, capsys):
    code, _, err = run(capsys, "verify", str(tmp_path / "nothing"))
    assert code == 3 and "does not exist" in err


def test_config_file(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# sweep defaults\nlambda-day = 30000000\nmu = 7\n")
    code, out, _ = run(capsys, "sweep", "--config", str(cfg))
    assert code == 0 and out.splitlines()[1].startswith("7,29395200,")
    # flags still win over the file
    code, out, _ = run(capsys, "sweep", "--config", str(cfg), "--mu", "25")
    assert out.splitlines()[1].startswith("25,")


def test_config_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("lambda_day = 1e6\nbogus = 3\n")
    assert usage_code(capsys, "sweep", "--config", str(cfg)) == 2
