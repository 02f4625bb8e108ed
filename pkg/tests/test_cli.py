"""Command-line interface: subcommands, exit codes, output files."""

import numpy as np
import pytest

from conftest import small_truth
from dynaqtl.cli import (
    EXIT_CONSISTENCY,
    EXIT_OK,
    EXIT_PARSE,
    EXIT_USAGE,
    main,
)
from dynaqtl.data import read_scan_result, write_dataset
from dynaqtl.simulate import simulate_population


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    truth = small_truth(n_individuals=40, seed=31)
    dataset = simulate_population(truth, seed=32)
    write_dataset(
        dataset, root / "p.csv", root / "g.csv", root / "m.csv"
    )
    return root


def _dataset_args(data_dir):
    return [
        "--phenotypes", str(data_dir / "p.csv"),
        "--genotypes", str(data_dir / "g.csv"),
        "--map", str(data_dir / "m.csv"),
        "--n-basis", "4",
    ]


def test_scan_writes_outputs(data_dir, tmp_path, capsys):
    out = tmp_path / "scanout"
    code = main(
        ["scan", *_dataset_args(data_dir), "--step", "8", "--n-perm", "0",
         "--out-dir", str(out)]
    )
    assert code == EXIT_OK
    assert (out / "scan.csv").exists()
    assert (out / "scan.svg").exists()
    rows, threshold, calls = read_scan_result(out / "scan.csv")
    assert len(rows) >= 6
    assert threshold is None and calls == []
    err = capsys.readouterr().err
    assert "resolved configuration" in err
    assert "max LR" in err


def test_scan_with_permutations_declares_threshold(data_dir, tmp_path):
    out = tmp_path / "scanperm"
    code = main(
        ["scan", *_dataset_args(data_dir), "--step", "16", "--n-perm", "2",
         "--seed", "1", "--out-dir", str(out)]
    )
    assert code == EXIT_OK
    _, threshold, _ = read_scan_result(out / "scan.csv")
    assert threshold is not None and threshold > 0


def test_fit_reports_covariance(data_dir, tmp_path, capsys):
    out = tmp_path / "fitout"
    code = main(
        ["fit", *_dataset_args(data_dir), "--group", "1", "--position", "22",
         "--out-dir", str(out)]
    )
    assert code == EXIT_OK
    assert (out / "fit.csv").exists()
    assert (out / "coefficients.csv").exists()
    assert (out / "curves.svg").exists()
    err = capsys.readouterr().err
    assert "sd_1" in err and "rho_12" in err and "LR" in err


def test_simulate_is_deterministic(tmp_path):
    truth_path = tmp_path / "truth.json"
    from dynaqtl.simulate import save_truth

    save_truth(small_truth(), truth_path)
    out1, out2 = tmp_path / "s1", tmp_path / "s2"
    for out in (out1, out2):
        code = main(
            ["simulate", "--truth", str(truth_path), "--seed", "5",
             "--out-dir", str(out)]
        )
        assert code == EXIT_OK
    for name in ("phenotypes.csv", "genotypes.csv", "map.csv", "truth.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_permute_worker_invariance(data_dir, tmp_path):
    outs = []
    for w, name in ((1, "w1"), (2, "w2")):
        out = tmp_path / name
        code = main(
            ["permute", *_dataset_args(data_dir), "--step", "16",
             "--n-perm", "3", "--seed", "9", "--workers", str(w),
             "--out-dir", str(out)]
        )
        assert code == EXIT_OK
        outs.append((out / "permutations.csv").read_bytes())
    assert outs[0] == outs[1]


def test_bootstrap_writes_table(data_dir, tmp_path):
    out = tmp_path / "bootout"
    code = main(
        ["bootstrap", *_dataset_args(data_dir), "--group", "1",
         "--position", "22", "--n-boot", "2", "--out-dir", str(out)]
    )
    assert code == EXIT_OK
    text = (out / "bootstrap.csv").read_text(encoding="utf-8")
    assert text.startswith("parameter,h1_estimate,h1_se,h0_estimate,h0_se")
    assert "sd_1" in text and "rho_12" in text


def test_missing_file_is_parse_error(data_dir, tmp_path):
    code = main(
        ["scan", "--phenotypes", str(data_dir / "p.csv"),
         "--genotypes", str(data_dir / "g.csv"),
         "--map", str(tmp_path / "nope.csv"),
         "--out-dir", str(tmp_path / "x")]
    )
    assert code == EXIT_PARSE
    assert not (tmp_path / "x" / "scan.csv").exists()  # no partial outputs


def test_inconsistent_files_exit_code(data_dir, tmp_path):
    # a map whose markers do not appear in the genotype file
    bad_map = tmp_path / "bad_map.csv"
    bad_map.write_text(
        "group,marker,position_cM\n1,ZZ1,0.0\n1,ZZ2,10.0\n", encoding="utf-8"
    )
    code = main(
        ["scan", "--phenotypes", str(data_dir / "p.csv"),
         "--genotypes", str(data_dir / "g.csv"), "--map", str(bad_map),
         "--out-dir", str(tmp_path / "y")]
    )
    assert code == EXIT_CONSISTENCY


def test_usage_errors(data_dir, tmp_path):
    assert main(["scan", "--bogus"]) == EXIT_USAGE
    assert main(
        ["fit", *_dataset_args(data_dir), "--group", "1",
         "--position", "9999", "--out-dir", str(tmp_path / "z")]
    ) == EXIT_USAGE


def test_entry_point_help():
    with pytest.raises(SystemExit):
        # argparse exits 0 on --help when called through parse_args directly
        from dynaqtl.cli import build_parser

        build_parser().parse_args(["--help"])
