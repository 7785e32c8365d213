#!/usr/bin/env python3
"""End-to-end checks of the dsttrack command line: help text, exit codes,
determinism, output schemas and resumed training."""

import argparse
import csv
import json
import re
import shutil
import subprocess
import sys
from pathlib import Path

import jsonschema

ARGS = None
FAILURES = []


def run(*argv, expect=0):
    proc = subprocess.run([ARGS.exe, *map(str, argv)], capture_output=True, text=True)
    if expect is not None and proc.returncode != expect:
        raise AssertionError(f"{' '.join(map(str, argv))}: exit {proc.returncode}, expected {expect}\n{proc.stderr}")
    return proc


def check(name, fn):
    try:
        fn()
        print(f"ok   {name}")
    except Exception as e:  # noqa: BLE001 - report every failure, keep going
        FAILURES.append(name)
        print(f"FAIL {name}: {e}")


def schema(name):
    return json.loads((ARGS.repo / "schemas" / f"{name}.schema.json").read_text())


def csv_header(role):
    return schema("csv-headers")["x-headers"][role]


def write_config(path, **overrides):
    cfg = json.loads((ARGS.repo / "configs" / "smoke.json").read_text())
    for dotted, value in overrides.items():
        node = cfg
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    path.write_text(json.dumps(cfg, indent=2))
    return path


def pipeline(dirname, config):
    d = ARGS.work / dirname
    shutil.rmtree(d, ignore_errors=True)
    d.mkdir(parents=True)
    run("simulate", "--config", config, "--out", d / "videos.bin", "--count", 2)
    run("train", "--config", config, "--data", d / "videos.bin", "--out", d / "model.ckpt")
    run("track", "--config", config, "--checkpoint", d / "model.ckpt", "--video", d / "videos.bin", "--index", 1,
        "--out", d / "tracks")
    run("eval", "--pred", d / "tracks.txt", "--gt", d / "videos.bin", "--index", 1, "--out", d / "eval")
    return d


PIPELINE_FILES = ["videos.bin", "videos.bin.manifest.json", "model.ckpt", "model.ckpt.loss.csv", "tracks.txt",
                  "tracks.json", "eval.json", "eval.csv"]


def test_help_documents_every_flag():
    source = (ARGS.repo / "tools" / "dsttrack.cpp").read_text()
    registered = {}
    for var, cmd in re.findall(r'auto\* (\w+) = app\.add_subcommand\("(\w+)"', source):
        registered[cmd] = set(re.findall(rf'{var}->add_option\("(--[\w-]+)"', source))
    assert set(registered) == {"simulate", "train", "track", "eval", "ablate"}, registered
    top = run("--help").stdout
    for cmd, flags in registered.items():
        assert cmd in top, f"{cmd} missing from top-level help"
        text = run(cmd, "--help").stdout
        for flag in flags:
            line = next((ln for ln in text.splitlines() if re.search(rf"{flag}\b", ln)), None)
            assert line is not None, f"{cmd} --help does not list {flag}"
            # "  --flag TYPE [default] REQUIRED      Description"
            assert re.search(rf"{flag}\b.*\S\s{{2,}}\S", line), f"{cmd} {flag} has no description"
    assert "Exit codes" in top and "DST_LOG_LEVEL" in top


def test_exit_codes():
    bad = write_config(ARGS.work / "zero_targets.json", **{"scenario.targets": 0})
    proc = run("simulate", "--config", bad, "--out", ARGS.work / "never.bin", expect=2)
    assert "scenario.targets" in proc.stderr, proc.stderr
    assert not (ARGS.work / "never.bin").exists()
    unknown = write_config(ARGS.work / "unknown_key.json", **{"train.speed": 1})
    assert "train.speed" in run("simulate", "--config", unknown, "--out", ARGS.work / "x.bin", expect=2).stderr
    run("simulate", "--config", ARGS.work / "does-not-exist.json", "--out", ARGS.work / "x.bin", expect=4)
    run("simulate", "--out", ARGS.work / "x.bin", expect=2)  # missing required flag
    run("frobnicate", expect=2)
    garbage = ARGS.work / "garbage.bin"
    garbage.write_bytes(b"not a video")
    empty = ARGS.work / "empty.txt"
    empty.write_text("")
    run("eval", "--pred", empty, "--gt", garbage, "--out", ARGS.work / "e", expect=4)
    smoke = ARGS.repo / "configs" / "smoke.json"
    d = ARGS.work / "exit"
    d.mkdir(exist_ok=True)
    run("simulate", "--config", smoke, "--out", d / "v.bin")
    run("track", "--checkpoint", garbage, "--video", d / "v.bin", "--out", d / "t", expect=4)
    run("eval", "--pred", garbage, "--gt", d / "v.bin", "--out", d / "e", expect=2)  # malformed track file
    run("eval", "--pred", garbage, "--gt", d / "v.bin", "--index", 5, "--out", d / "e", expect=2)
    huge = write_config(ARGS.work / "diverge.json", **{"train.optimizer.learning_rate": 1e300, "train.iterations": 5})
    proc = run("train", "--config", huge, "--data", d / "v.bin", "--out", d / "nan.ckpt", expect=3)
    assert "numeric" in proc.stderr, proc.stderr
    assert (d / "nan.ckpt.last-finite").exists()


def test_end_to_end_determinism():
    config = ARGS.repo / "configs" / "smoke.json"
    a, b = pipeline("det_a", config), pipeline("det_b", config)
    for name in PIPELINE_FILES:
        assert (a / name).read_bytes() == (b / name).read_bytes(), f"{name} differs between identical runs"
    c = pipeline("det_c", write_config(ARGS.work / "seed8.json", seed=8))
    assert (a / "videos.bin").read_bytes() == (c / "videos.bin").read_bytes()
    assert (a / "model.ckpt").read_bytes() != (c / "model.ckpt").read_bytes(), "model seed has no effect"


def test_outputs_match_schemas():
    d = pipeline("schemas", ARGS.repo / "configs" / "smoke.json")
    jsonschema.validate(json.loads((d / "videos.bin.manifest.json").read_text()), schema("video-manifest"))
    jsonschema.validate(json.loads((d / "tracks.json").read_text()), schema("tracks"))
    report = json.loads((d / "eval.json").read_text())
    jsonschema.validate(report, schema("eval"))
    for path in sorted((ARGS.repo / "configs").glob("*.json")):
        jsonschema.validate(json.loads(path.read_text()), schema("run-config"))
    manifest = json.loads((d / "videos.bin.manifest.json").read_text())
    jsonschema.validate({"scenario": manifest["videos"][0]["config"]}, schema("run-config"))
    assert (d / "model.ckpt.loss.csv").read_text().splitlines()[0] == csv_header("loss")
    rows = (d / "eval.csv").read_text().splitlines()
    assert rows[0] == csv_header("eval") and len(rows) == 2
    for line in (d / "tracks.txt").read_text().splitlines():
        assert re.fullmatch(r"\d+,\d+,-?\d+\.\d{2},-?\d+\.\d{2},\d+\.\d{2},\d+\.\d{2},\d\.\d{6}", line), line


def test_resume_continues_numbering():
    smoke = ARGS.repo / "configs" / "smoke.json"
    d = ARGS.work / "resume"
    shutil.rmtree(d, ignore_errors=True)
    d.mkdir(parents=True)
    run("simulate", "--config", smoke, "--out", d / "v.bin", "--count", 2)
    run("train", "--config", smoke, "--data", d / "v.bin", "--out", d / "full.ckpt")
    half = write_config(d / "half.json", **{"train.iterations": 20})
    run("train", "--config", half, "--data", d / "v.bin", "--out", d / "a.ckpt")
    run("train", "--config", half, "--data", d / "v.bin", "--resume", d / "a.ckpt", "--out", d / "b.ckpt")
    full = list(csv.DictReader((d / "full.ckpt.loss.csv").open()))
    first = list(csv.DictReader((d / "a.ckpt.loss.csv").open()))
    second = list(csv.DictReader((d / "b.ckpt.loss.csv").open()))
    assert [r["iteration"] for r in first] == [str(i) for i in range(1, 21)]
    assert [r["iteration"] for r in second] == [str(i) for i in range(21, 41)]
    assert first + second == full, "resumed trace differs from the uninterrupted one"
    assert (d / "b.ckpt").read_bytes() == (d / "full.ckpt").read_bytes()
    other = write_config(d / "other.json", **{"model.embed_dim": 16})
    run("train", "--config", other, "--data", d / "v.bin", "--resume", d / "a.ckpt", "--out", d / "c.ckpt", expect=2)


def test_zero_iterations_is_initialisation():
    smoke = ARGS.repo / "configs" / "smoke.json"
    d = ARGS.work / "zero"
    shutil.rmtree(d, ignore_errors=True)
    d.mkdir(parents=True)
    zero = write_config(d / "zero.json", **{"train.iterations": 0})
    other_data = write_config(d / "other.json", **{"scenario.seed": 99})
    run("simulate", "--config", smoke, "--out", d / "a.bin")
    run("simulate", "--config", other_data, "--out", d / "b.bin")
    run("train", "--config", zero, "--data", d / "a.bin", "--out", d / "a.ckpt")
    run("train", "--config", zero, "--data", d / "b.bin", "--out", d / "b.ckpt")
    assert (d / "a.ckpt").read_bytes() == (d / "b.ckpt").read_bytes()
    assert (d / "a.ckpt.loss.csv").read_text() == csv_header("loss") + "\n"


def test_ablate_outputs():
    quick = write_config(ARGS.work / "ablate.json", **{"train.iterations": 10})
    outs = []
    for tag in ("a", "b"):
        d = ARGS.work / f"ablate_{tag}"
        shutil.rmtree(d, ignore_errors=True)
        run("ablate", "--config", quick, "--out", d)
        outs.append(d)
    a, b = outs
    for name in ("ablation.csv", "per_video.csv", "comparisons.csv", "ablation.svg", "config.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), f"{name} differs between identical runs"
    rows = list(csv.reader((a / "ablation.csv").open()))
    assert ",".join(rows[0]) == csv_header("ablation")
    assert [r[1] for r in rows[1:]] == ["none", "classic", "dst", "with_mask", "without_mask"]
    assert (a / "per_video.csv").read_text().splitlines()[0] == csv_header("per_video")
    assert (a / "comparisons.csv").read_text().splitlines()[0] == csv_header("comparisons")
    per_video = list(csv.DictReader((a / "per_video.csv").open()))
    seeds = {}
    for r in per_video:
        seeds.setdefault((r["experiment"], r["arm"]), []).append(r["video_seed"])
    enc = [v for (e, _), v in seeds.items() if e == "encoding"]
    assert all(s == enc[0] for s in enc), "encoding arms evaluated on different videos"
    svg = (a / "ablation.svg").read_text()
    assert svg.startswith("<svg") and svg.count("<rect") >= 5
    jsonschema.validate(json.loads((a / "config.json").read_text()), schema("run-config"))


def main():
    global ARGS
    parser = argparse.ArgumentParser()
    parser.add_argument("--exe", required=True)
    parser.add_argument("--repo", required=True, type=Path)
    parser.add_argument("--work", required=True, type=Path)
    ARGS = parser.parse_args()
    ARGS.work.mkdir(parents=True, exist_ok=True)
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            check(name[5:], fn)
    print(f"{len(FAILURES)} failure(s)")
    return 1 if FAILURES else 0


if __name__ == "__main__":
    sys.exit(main())
