import json

from specverify.cli import EXIT_OK, EXIT_SCIENCE, EXIT_USAGE, main


def run(argv, capsys):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# ---------------------------------------------------------------------------
# example
# ---------------------------------------------------------------------------


def test_example_replays_the_reference_chains(capsys):
    code, out, _ = run(["example"], capsys)
    assert code == EXIT_OK
    assert "accepted_len: backward scan gives tau=4" in out
    assert out.count("pass") >= 5


def test_example_show_tokenwise_prints_the_chain(capsys):
    code, out, _ = run(["example", "--show", "tokenwise"], capsys)
    assert code == EXIT_OK
    assert out.splitlines()[0].startswith("0.8159, 1.0000, 1.0000, 1.0000, 0.0000")


def test_example_fails_at_unreachable_tolerance(capsys):
    code, out, _ = run(["example", "--tolerance", "1e-9"], capsys)
    assert code == EXIT_SCIENCE
    assert "FAIL" in out


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------


def test_oracle_small_sweep_passes(tmp_path, capsys):
    out_path = tmp_path / "oracle.json"
    code, out, _ = run(
        ["oracle", "--vocab", "3", "--gamma", "2", "--pairs", "3", "--seed", "42", "--out", str(out_path)],
        capsys,
    )
    assert code == EXIT_OK
    doc = json.loads(out_path.read_text())
    assert doc["all_pass"] is True
    assert len(doc["reports"]) == 9  # 3 pairs x 3 verifiers
    for report in doc["reports"]:
        assert report["tv"] < doc["config"]["tv_tolerance"]
        assert set(report) >= {"verifier", "vocab_size", "gamma", "length", "seed", "tv", "pass"}


def test_oracle_rejects_tiny_vocabulary(tmp_path, capsys):
    code, _, err = run(["oracle", "--vocab", "1", "--out", str(tmp_path / "x.json")], capsys)
    assert code == EXIT_USAGE
    assert "vocab" in err


def test_oracle_mutation_is_detected(tmp_path, capsys):
    out_path = tmp_path / "oracle.json"
    code, _, _ = run(
        [
            "oracle",
            "--verifiers",
            "capped-hsd",
            "--vocab",
            "3",
            "--gamma",
            "3",
            "--pairs",
            "5",
            "--mutate",
            "h-double",
            "--out",
            str(out_path),
        ],
        capsys,
    )
    assert code == EXIT_SCIENCE
    assert json.loads(out_path.read_text())["all_pass"] is False


def test_oracle_csv_format(tmp_path, capsys):
    out_path = tmp_path / "oracle.csv"
    code, _, _ = run(
        ["oracle", "--vocab", "3", "--gamma", "2", "--pairs", "2", "--format", "csv", "--out", str(out_path)],
        capsys,
    )
    assert code == EXIT_OK
    lines = out_path.read_text().splitlines()
    assert lines[0] == "verifier,vocab_size,gamma,length,seed,pair_index,tv,conservation,worst_sequence,worst_error,pass"
    assert len(lines) == 7


def test_oracle_workers_do_not_change_bytes(tmp_path, capsys):
    args = ["oracle", "--vocab", "3", "--gamma", "2", "--pairs", "4", "--seed", "7"]
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert run(args + ["--out", str(a), "--workers", "1"], capsys)[0] == EXIT_OK
    assert run(args + ["--out", str(b), "--workers", "3"], capsys)[0] == EXIT_OK
    assert a.read_bytes() == b.read_bytes()


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def test_bench_single_token_grid_orders_trivially(tmp_path, capsys):
    out_path = tmp_path / "bench.csv"
    code, _, _ = run(
        ["bench", "--vocab", "4", "--gamma", "1", "--eps", "0.5,1.0", "--trials", "300", "--out", str(out_path)],
        capsys,
    )
    assert code == EXIT_OK
    lines = out_path.read_text().splitlines()
    assert lines[0].startswith("method,vocab_size,gamma,eps,seed,n_drafts,")
    assert len(lines) == 7
    rows = [line.split(",") for line in lines[1:]]
    by_config = {}
    for row in rows:
        by_config.setdefault(row[3], {})[row[0]] = float(row[6])
    for values in by_config.values():
        assert abs(values["hsd"] - values["blockwise"]) <= 1e-12
        assert abs(values["blockwise"] - values["tokenwise"]) <= 1e-12


def test_bench_reports_per_trace_violations_of_the_pinned_formula(tmp_path, capsys):
    # with the pinned blockwise acceptance formula, block >= token fails on
    # a visible fraction of traces; bench must surface that with exit 2
    out_path = tmp_path / "bench.json"
    code, out, _ = run(
        [
            "bench",
            "--vocab",
            "4",
            "--gamma",
            "4",
            "--eps",
            "0.8",
            "--trials",
            "400",
            "--format",
            "json",
            "--out",
            str(out_path),
        ],
        capsys,
    )
    assert code == EXIT_SCIENCE
    doc = json.loads(out_path.read_text())
    assert doc["summary"]["ordering_violations"] > 0
    # the mean-level ordering still holds
    means = {row["method"]: row["mean_expected_tau"] for row in doc["rows"]}
    assert means["hsd"] >= means["blockwise"] >= means["tokenwise"]


def test_bench_bytes_are_worker_count_independent(tmp_path, capsys):
    args = ["bench", "--vocab", "3,4", "--gamma", "2", "--eps", "0.3,0.9", "--trials", "150", "--seed", "9"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    code_a = run(args + ["--out", str(a), "--workers", "1"], capsys)[0]
    code_b = run(args + ["--out", str(b), "--workers", "4"], capsys)[0]
    assert code_a == code_b
    assert a.read_bytes() == b.read_bytes()


def test_bench_repeated_runs_are_byte_identical(tmp_path, capsys):
    args = ["bench", "--vocab", "3", "--gamma", "1,2", "--eps", "0.5", "--trials", "200", "--seed", "3"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run(args + ["--out", str(a)], capsys)
    run(args + ["--out", str(b)], capsys)
    assert a.read_bytes() == b.read_bytes()


# ---------------------------------------------------------------------------
# mc
# ---------------------------------------------------------------------------


def test_mc_single_draft_run(tmp_path, capsys):
    out_path = tmp_path / "mc.json"
    code, _, _ = run(
        ["mc", "--verifier", "capped-hsd", "--vocab", "2", "--gamma", "2", "--trials", "20000", "--out", str(out_path)],
        capsys,
    )
    assert code == EXIT_OK
    report = json.loads(out_path.read_text())["report"]
    assert report["pass"] is True
    assert report["k_drafts"] == 1


def test_mc_drafts_flag_switches_to_multidraft(tmp_path, capsys):
    out_path = tmp_path / "mc.json"
    code, _, _ = run(
        ["mc", "--verifier", "capped-hsd", "--drafts", "2", "--trials", "20000", "--out", str(out_path)],
        capsys,
    )
    assert code == EXIT_OK
    report = json.loads(out_path.read_text())["report"]
    assert report["verifier"] == "multidraft-hsd"
    assert report["k_drafts"] == 2


def test_mc_naive_has_no_multidraft_variant(tmp_path, capsys):
    code, _, err = run(["mc", "--verifier", "naive-hsd", "--drafts", "2", "--out", str(tmp_path / "x")], capsys)
    assert code == EXIT_USAGE
    assert "multi-draft" in err


# ---------------------------------------------------------------------------
# config file, env var, usage errors
# ---------------------------------------------------------------------------


def test_config_file_fills_defaults_and_flags_win(tmp_path, capsys):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"vocab": 3, "gamma": 2, "pairs": 2, "verifiers": "tokenwise"}))
    out_path = tmp_path / "oracle.json"
    code, _, _ = run(
        ["oracle", "--config", str(config), "--pairs", "1", "--out", str(out_path)],
        capsys,
    )
    assert code == EXIT_OK
    doc = json.loads(out_path.read_text())
    assert doc["config"]["pairs"] == 1  # explicit flag beat the config file
    assert doc["config"]["verifiers"] == ["tokenwise"]


def test_config_file_rejects_unknown_keys(tmp_path, capsys):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"vocabulary": 3}))
    code, _, err = run(["oracle", "--config", str(config)], capsys)
    assert code == EXIT_USAGE
    assert "unknown config keys" in err


def test_default_output_dir_comes_from_the_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("SPECVERIFY_OUT_DIR", str(tmp_path / "reports"))
    code, _, _ = run(["oracle", "--vocab", "3", "--gamma", "2", "--pairs", "1"], capsys)
    assert code == EXIT_OK
    assert (tmp_path / "reports" / "oracle_report.json").exists()


def test_unknown_subcommand_is_a_usage_error(capsys):
    assert main(["frobnicate"]) == EXIT_USAGE
