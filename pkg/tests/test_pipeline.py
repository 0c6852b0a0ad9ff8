import json

import pytest

from dwi.errors import MissingArtifact
from dwi.harness.formats import load_checkpoint, load_protos
from dwi.harness.pipeline import (MISSING, all_methods, ckpt_path, evaluate, protos_path, read_sweep,
                                  report_filename, run_all, run_finetune, run_pretrain, run_report)


def test_artifacts_written(tiny_run, tiny_cfg):
    out, reports = tiny_run
    for name in ("pretrain", "shift-dark", "shift-texture", "shift-dark+shift-texture"):
        assert ckpt_path(out, name).exists()
    assert load_protos(protos_path(out)).names == ["base", "shift-dark", "shift-texture"]
    assert load_protos(protos_path(out, "kde")).proto_kind == "kde"
    assert set(reports) == set(all_methods(tiny_cfg))
    for m in all_methods(tiny_cfg):
        assert (out / report_filename(m)).exists()
        assert (out / report_filename(m)).with_suffix(".timing.json").exists()
    assert len(read_sweep(out / "sweep-shift-dark.csv")) == 3


def test_dwi_report_fields(tiny_run):
    _, reports = tiny_run
    entry = reports["dwi"]["domains"]["base"]
    assert len(entry["mean_lambda"]) == 3
    assert len(entry["hist"]) == 3 and len(entry["hist"][0]) == 20
    assert 0.0 <= entry["frac_max_gt_0_9"] <= 1.0
    assert reports["dwi"]["factor_domains"] == ["base", "shift-dark", "shift-texture"]
    # timing lives in its own file so reports stay byte-deterministic
    assert "decoder_build_s" not in json.dumps(reports["dwi"])


def test_single_domain_dwi_equals_pretrained(tiny_run, tiny_cfg):
    out, _ = tiny_run
    cfg = tiny_cfg.with_overrides(finetune_domains=())
    dwi, _ = evaluate(cfg, out, "dwi", ["base", "mix-unseen"])
    pre, _ = evaluate(cfg, out, "pretrained", ["base", "mix-unseen"])
    for d in ("base", "mix-unseen"):
        assert dwi["domains"][d]["miou"] == pre["domains"][d]["miou"]
        assert dwi["domains"][d]["mean_lambda"] == [1.0]


def test_finetune_leaves_pretrained_checkpoint_untouched(tmp_path, tiny_cfg):
    cfg = tiny_cfg.with_overrides(finetune_domains=("shift-dark",))
    run_pretrain(cfg, tmp_path)
    before = ckpt_path(tmp_path, "pretrain").read_bytes()
    protos_before = load_protos(protos_path(tmp_path)).names
    run_finetune(cfg, tmp_path, "shift-dark")
    assert ckpt_path(tmp_path, "pretrain").read_bytes() == before
    assert protos_before == ["base"]
    assert load_protos(protos_path(tmp_path)).names == ["base", "shift-dark"]
    # a second fine-tune of the same domain does not duplicate its prototypes
    run_finetune(cfg, tmp_path, "shift-dark")
    assert load_protos(protos_path(tmp_path)).names == ["base", "shift-dark"]
    assert not load_checkpoint(ckpt_path(tmp_path, "shift-dark")) == load_checkpoint(ckpt_path(tmp_path, "pretrain"))


def test_missing_artifacts(tmp_path, tiny_cfg):
    with pytest.raises(MissingArtifact):
        run_finetune(tiny_cfg, tmp_path, "shift-dark")
    with pytest.raises(MissingArtifact):
        evaluate(tiny_cfg, tmp_path, "dwi", ["base"])
    with pytest.raises(MissingArtifact):
        run_report([tmp_path / "none.json"])


def test_unknown_method(tiny_run, tiny_cfg):
    with pytest.raises(ValueError):
        evaluate(tiny_cfg, tiny_run[0], "dwi-magic", ["base"])


def test_report_renders_missing_cells(tmp_path):
    a = {"method": "dwi", "domains": {"base": {"miou": 0.5}, "x": {"miou": 0.25}}}
    b = {"method": "pretrained", "domains": {"base": {"miou": 0.75}}}
    paths = []
    for i, r in enumerate((a, b)):
        p = tmp_path / f"r{i}.json"
        p.write_text(json.dumps(r))
        paths.append(p)
    md, csv_text = run_report(paths, tmp_path)
    assert md.splitlines() == [
        "| method | base | x |",
        "|---|---|---|",
        f"| pretrained | 0.7500 | {MISSING} |",
        "| dwi | 0.5000 | 0.2500 |",
    ]
    assert csv_text.splitlines()[1] == f"pretrained,0.75,{MISSING}"
    assert (tmp_path / "report.md").read_text() == md
    assert run_report(paths[::-1])[0] == md


def test_tiny_run_is_reproducible(tmp_path, tiny_run, tiny_cfg):
    out, _ = tiny_run
    run_all(tiny_cfg, tmp_path)
    names = sorted(p.name for p in out.iterdir() if not p.name.endswith(".timing.json"))
    assert names == sorted(p.name for p in tmp_path.iterdir() if not p.name.endswith(".timing.json"))
    for n in names:
        assert (out / n).read_bytes() == (tmp_path / n).read_bytes(), n


def test_report_cells_copy_source_values(tiny_run, tiny_cfg):
    out, reports = tiny_run
    rows = (out / "report.csv").read_text().splitlines()
    header = rows[0].split(",")
    for row in rows[1:]:
        method, *cells = row.split(",")
        for d, cell in zip(header[1:], cells):
            assert float(cell) == reports[method]["domains"][d]["miou"]


# ----------------------------------------------------- reference-run properties


@pytest.mark.slow
def test_reference_pretrain_quality(reference_run):
    _, reports = reference_run
    assert reports["pretrained"]["domains"]["base"]["miou"] >= 0.80


@pytest.mark.slow
def test_reference_sweep_trends_have_expected_sign(reference_run):
    from scipy.stats import spearmanr
    out, _ = reference_run
    rows = read_sweep(out / "sweep-shift-dark.csv")
    assert [r["lambda"] for r in rows] == [k / 10 for k in range(11)]
    lam = [r["lambda"] for r in rows]
    assert spearmanr(lam, [r["miou_ft"] for r in rows])[0] > 0.9
    assert spearmanr(lam, [r["miou_base"] for r in rows])[0] < -0.9


@pytest.mark.slow
def test_reference_unseen_mixture_not_worse(reference_run):
    _, reports = reference_run
    others = [m for m in reports if not m.startswith("dwi")]
    best = max(reports[m]["domains"]["mix-unseen"]["miou"] for m in others)
    assert reports["dwi"]["domains"]["mix-unseen"]["miou"] >= best - 0.02
