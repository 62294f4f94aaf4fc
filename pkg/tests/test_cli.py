import json

import pytest

from conftest import simple_performance
from pianist_id.cli import main
from pianist_id.midi_io import from_note_table, parse_smf, write_smf


def write_midi_dir(tmp_path, performances, name="perfs"):
    d = tmp_path / name
    d.mkdir()
    for perf in performances:
        (d / f"{perf.performer_id}.mid").write_bytes(write_smf(perf))
    return d


@pytest.fixture
def trio_dir(tmp_path):
    onsets = [0.0, 0.5, 1.0, 1.5, 2.25]
    pitches = [60, 64, 67, 65, 62]
    perfs = [
        simple_performance(onsets, pitches, performer_id=f"p{i}") for i in range(1, 4)
    ]
    return write_midi_dir(tmp_path, perfs)


class TestExitCodes:
    def test_no_command_prints_help_and_fails(self, capsys):
        assert main([]) == 2
        assert "usage" in capsys.readouterr().out.lower()

    def test_unknown_command_is_usage_error(self):
        assert main(["frobnicate"]) == 2

    def test_missing_input_path_exits_2(self, tmp_path, capsys):
        code = main(["align", "--input", str(tmp_path / "nope"), "--out", str(tmp_path / "o")])
        assert code == 2
        assert "not found" in capsys.readouterr().err

    def test_unknown_feature_name_exits_2(self, trio_dir, tmp_path, capsys):
        code = main(
            [
                "evaluate",
                "--input",
                str(trio_dir),
                "--out",
                str(tmp_path / "o"),
                "--features",
                "OT,BOGUS",
            ]
        )
        assert code == 2
        assert "unknown feature" in capsys.readouterr().err


class TestAlign:
    def test_identical_inputs_give_identity_report(self, trio_dir, tmp_path):
        out = tmp_path / "out"
        assert main(["align", "--input", str(trio_dir), "--out", str(out)]) == 0
        report = json.loads((out / "alignment_report.json").read_text())
        assert report["n_positions"] == 5
        for stats in report["per_performer"].values():
            assert stats["pairs"] == 5
            assert stats["insertions"] == 0 and stats["deletions"] == 0
        table_lines = (out / "aligned_table.csv").read_text().splitlines()
        assert table_lines[0] == "position,performer,onset,offset,pitch,dynamic"
        assert len(table_lines) == 1 + 5 * 3

    def test_inserted_note_reported_as_insertion(self, tmp_path):
        base = [0.0, 0.5, 1.0, 1.5]
        pitches = [60, 64, 67, 65]
        ref = simple_performance(base, pitches, performer_id="ref")
        extra = simple_performance(
            base[:2] + [0.75] + base[2:], pitches[:2] + [94] + pitches[2:], performer_id="extra"
        )
        d = write_midi_dir(tmp_path, [ref, extra])
        out = tmp_path / "out"
        code = main(
            ["align", "--input", str(d), "--reference", str(d / "ref.mid"), "--out", str(out)]
        )
        assert code == 0
        report = json.loads((out / "alignment_report.json").read_text())
        assert report["per_performer"]["extra"]["insertions"] == 1


class TestFeatures:
    def test_identical_performers_dump_all_zeros(self, tmp_path):
        # 4 copies: the across-performer mean of 4 equal floats is exact, so
        # the norm coincides with every performance and deviations are 0.0
        onsets = [0.0, 0.5, 1.0, 1.5, 2.25]
        pitches = [60, 64, 67, 65, 62]
        perfs = [
            simple_performance(onsets, pitches, performer_id=f"p{i}") for i in range(1, 5)
        ]
        d = write_midi_dir(tmp_path, perfs)
        out = tmp_path / "out"
        assert main(["features", "--input", str(d), "--out", str(out)]) == 0
        lines = (out / "features.csv").read_text().splitlines()
        assert lines[0] == "performer,kind,position,value"
        assert all(line.endswith(",0.0") for line in lines[1:])
        # 4 performers x (3 point kinds x 5 + 2 pair kinds x 4)
        assert len(lines) - 1 == 4 * (3 * 5 + 2 * 4)

    def test_feature_dump_bytes_are_deterministic(self, trio_dir, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["features", "--input", str(trio_dir), "--out", str(out_a)]) == 0
        assert main(["features", "--input", str(trio_dir), "--out", str(out_b)]) == 0
        assert (out_a / "features.csv").read_bytes() == (out_b / "features.csv").read_bytes()
        assert (out_a / "norm.csv").read_bytes() == (out_b / "norm.csv").read_bytes()


class TestSynthAndEvaluate:
    def test_synth_is_reproducible_and_reparses_exactly(self, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        args = ["synth", "--performers", "3", "--notes", "250", "--seed", "5"]
        assert main(args + ["--out", str(out_a)]) == 0
        assert main(args + ["--out", str(out_b)]) == 0
        for rel in ("profiles.json", "performances/p1.mid", "note_tables/p2.csv"):
            assert (out_a / rel).read_bytes() == (out_b / rel).read_bytes()
        # SMF and note-table CSV describe the same quantized performance
        for pid in ("p1", "p2", "p3"):
            from_midi = parse_smf(
                (out_a / "performances" / f"{pid}.mid").read_bytes(), performer_id=pid
            )
            from_csv = from_note_table(
                (out_a / "note_tables" / f"{pid}.csv").read_text(), performer_id=pid
            )
            assert from_midi.notes == from_csv.notes

    def test_evaluate_outputs_and_jobs_independence(self, tmp_path):
        data = tmp_path / "data"
        assert main(
            ["synth", "--performers", "3", "--notes", "400", "--seed", "6", "--out", str(data)]
        ) == 0
        outs = []
        for jobs, name in ((1, "j1"), (3, "j3")):
            out = tmp_path / name
            code = main(
                [
                    "evaluate",
                    "--input",
                    str(data / "performances"),
                    "--out",
                    str(out),
                    "--model",
                    "histogram",
                    "--features",
                    "IOI,DL,ND",
                    "--groups",
                    "4",
                    "--jobs",
                    str(jobs),
                ]
            )
            assert code == 0
            outs.append(out)
        report_a = (outs[0] / "report.json").read_bytes()
        report_b = (outs[1] / "report.json").read_bytes()
        assert report_a == report_b
        for name in ("confusion.csv", "confusion_normalized.csv", "metrics.csv"):
            assert (outs[0] / name).exists()
        report = json.loads(report_a)
        assert report["metrics"]["macro_precision"] == 1.0

    def test_sweep_csv_has_table_layout(self, tmp_path):
        data = tmp_path / "data"
        assert main(
            ["synth", "--performers", "2", "--notes", "200", "--seed", "8", "--out", str(data)]
        ) == 0
        out = tmp_path / "out"
        code = main(
            [
                "evaluate",
                "--input",
                str(data / "performances"),
                "--out",
                str(out),
                "--features",
                "IOI,DL",
                "--groups",
                "4",
                "--sweep",
            ]
        )
        assert code == 0
        lines = (out / "sweep_histogram.csv").read_text().splitlines()
        assert lines[0] == "Feature,Precision,Recall,F-score"
        assert len(lines) == 1 + 26


class TestConfigFile:
    def test_config_file_supplies_missing_flags(self, trio_dir, tmp_path):
        out = tmp_path / "out"
        config = tmp_path / "run.json"
        config.write_text(json.dumps({"input": str(trio_dir), "out": str(out)}))
        assert main(["align", "--config", str(config)]) == 0
        assert (out / "alignment_report.json").exists()

    def test_flags_override_config_file(self, trio_dir, tmp_path):
        flag_out = tmp_path / "flag_out"
        config = tmp_path / "run.json"
        config.write_text(
            json.dumps({"input": str(trio_dir), "out": str(tmp_path / "cfg_out")})
        )
        assert main(["align", "--config", str(config), "--out", str(flag_out)]) == 0
        assert flag_out.exists()
        assert not (tmp_path / "cfg_out").exists()

    def test_bad_config_file_exits_2(self, tmp_path):
        config = tmp_path / "broken.json"
        config.write_text("{nope")
        assert main(["align", "--config", str(config)]) == 2
