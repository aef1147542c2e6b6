import os

import numpy as np
import pytest

import semagen as sg
from semagen import trainer
from semagen.cli import build_parser, main
from semagen.config import format_config


@pytest.fixture(scope="module")
def tiny_config_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.cfg"
    path.write_text(format_config(sg.tiny_config()))
    return str(path)


@pytest.fixture(scope="module")
def tiny_checkpoints(tmp_path_factory):
    cfg = sg.tiny_config()
    ds = sg.build_dataset(cfg.data, seed=0)
    out = tmp_path_factory.mktemp("ckpt")
    vq = trainer.train_vqvae(cfg, ds)
    corpus = trainer.extract_codes(vq.checkpoint, ds)
    latent = trainer.train_latent_prior(cfg, corpus)
    layout = trainer.train_layout_prior(cfg, corpus.layouts)
    paths = {}
    for name, result in (("vqvae", vq), ("latent", latent), ("layout", layout)):
        p = str(out / f"{name}.msgf")
        result.checkpoint.save(p)
        paths[name] = p
    return paths


class TestHelp:
    def test_every_flag_documented(self):
        parser = build_parser()
        # each subcommand's help text must mention all of its option strings
        subparsers = next(a for a in parser._actions
                          if hasattr(a, "choices") and a.choices)
        expected = {
            "gen-data": ["--config", "--seed", "--out", "--threads", "--n",
                         "--constraint"],
            "train-vqvae": ["--config", "--seed", "--out", "--data",
                            "--log-every"],
            "extract-codes": ["--vqvae", "--data", "--out"],
            "train-prior": ["--codes", "--out"],
            "train-layout-prior": ["--codes", "--out"],
            "sample": ["--vqvae", "--prior", "--layout-prior", "--mode",
                       "--layouts", "--n", "--temperature"],
            "eval": ["--data", "--generated", "--seg-steps",
                     "--protocol-seeds"],
            "verify": ["--config", "--seed", "--out", "--threads"],
        }
        for command, flags in expected.items():
            text = subparsers.choices[command].format_help()
            for flag in flags:
                assert flag in text, f"{command} help missing {flag}"

    def test_all_commands_present(self):
        parser = build_parser()
        subparsers = next(a for a in parser._actions
                          if hasattr(a, "choices") and a.choices)
        assert set(subparsers.choices) == {
            "gen-data", "train-vqvae", "extract-codes", "train-prior",
            "train-layout-prior", "sample", "eval", "verify"}


class TestExitCodes:
    def test_bad_config_file_is_2(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("mystery_key=1\n")
        code = main(["gen-data", "--config", str(bad),
                     "--out", str(tmp_path / "d"), "--n", "1"])
        assert code == 2

    def test_missing_checkpoint_is_3(self, tmp_path):
        code = main(["sample", "--vqvae", "/nonexistent.msgf",
                     "--prior", "/nonexistent2.msgf",
                     "--out", str(tmp_path / "s"), "--n", "1"])
        assert code == 3

    def test_missing_out_is_2(self, tiny_config_file):
        assert main(["gen-data", "--config", tiny_config_file, "--n", "1"]) == 2

    def test_wrong_phase_checkpoint_is_3(self, tiny_checkpoints, tmp_path):
        code = main(["sample", "--vqvae", tiny_checkpoints["latent"],
                     "--prior", tiny_checkpoints["vqvae"],
                     "--out", str(tmp_path / "s"), "--n", "1"])
        assert code == 3


class TestCommands:
    def test_gen_data_writes_dataset(self, tiny_config_file, tmp_path):
        out = str(tmp_path / "data")
        assert main(["gen-data", "--config", tiny_config_file,
                     "--out", out, "--n", "6"]) == 0
        ds = sg.load_dataset(out)
        assert len(ds) == 6

    def test_gen_data_constraint_flag(self, tiny_config_file, tmp_path):
        from semagen.sampler import check_constraint
        out = str(tmp_path / "cdata")
        assert main(["gen-data", "--config", tiny_config_file, "--out", out,
                     "--n", "5", "--constraint", "--seed", "4"]) == 0
        ds = sg.load_dataset(out)
        for lay in ds.layouts:
            assert check_constraint(lay, corner_margin=1).passed

    def test_sample_deterministic_across_runs(self, tiny_checkpoints, tmp_path):
        dirs = []
        for run in ("a", "b"):
            out = str(tmp_path / run)
            code = main(["sample", "--vqvae", tiny_checkpoints["vqvae"],
                         "--prior", tiny_checkpoints["latent"],
                         "--layout-prior", tiny_checkpoints["layout"],
                         "--mode", "full", "--n", "3", "--seed", "7",
                         "--out", out])
            assert code == 0
            dirs.append(out)
        for name in sorted(os.listdir(os.path.join(dirs[0], "images"))):
            a = open(os.path.join(dirs[0], "images", name), "rb").read()
            b = open(os.path.join(dirs[1], "images", name), "rb").read()
            assert a == b

    def test_verify_passes_and_writes_report(self, tmp_path):
        out = str(tmp_path / "verify.txt")
        assert main(["verify", "--seed", "0", "--out", out]) == 0
        text = open(out).read()
        assert text.count("PASS") == 6 and "FAIL" not in text

    def test_full_cli_pipeline(self, tiny_config_file, tmp_path):
        data = str(tmp_path / "data")
        work = str(tmp_path / "work")
        assert main(["gen-data", "--config", tiny_config_file,
                     "--out", data, "--n", "12"]) == 0
        assert main(["train-vqvae", "--config", tiny_config_file,
                     "--data", data, "--out", work]) == 0
        codes = os.path.join(work, "codes.npz")
        assert main(["extract-codes", "--vqvae", os.path.join(work, "vqvae.msgf"),
                     "--data", data, "--out", codes]) == 0
        assert main(["train-prior", "--config", tiny_config_file,
                     "--codes", codes, "--out", work]) == 0
        assert main(["train-layout-prior", "--config", tiny_config_file,
                     "--codes", codes, "--out", work]) == 0
        gen = str(tmp_path / "gen")
        assert main(["sample", "--vqvae", os.path.join(work, "vqvae.msgf"),
                     "--prior", os.path.join(work, "latent_prior.msgf"),
                     "--layout-prior", os.path.join(work, "layout_prior.msgf"),
                     "--mode", "full", "--n", "8", "--seed", "1",
                     "--out", gen]) == 0
        report = str(tmp_path / "report")
        assert main(["eval", "--data", data, "--generated", gen,
                     "--seg-steps", "12", "--protocol-seeds", "1",
                     "--out", report]) == 0
        assert os.path.exists(os.path.join(report, "report.csv"))
        assert os.path.exists(os.path.join(report, "report.txt"))

    def test_env_var_config(self, tiny_config_file, tmp_path, monkeypatch):
        from semagen.cli import CONFIG_ENV_VAR
        monkeypatch.setenv(CONFIG_ENV_VAR, tiny_config_file)
        out = str(tmp_path / "envdata")
        assert main(["gen-data", "--out", out, "--n", "2"]) == 0
        assert len(sg.load_dataset(out)) == 2
