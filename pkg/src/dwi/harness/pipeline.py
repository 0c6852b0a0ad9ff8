"""Scripted experiments: training stages, evaluation, the lambda sweep and reports.

Every stage reads and writes artifacts in one output directory:

    pretrain.dwic              pre-trained decoder
    ft-<domain>.dwic           decoder fine-tuned from pretrain.dwic
    ft-<a>+<b>.dwic            sequential fine-tune (a, then b)
    protos.dwip                MVN prototypes, appended by each training stage
    protos-<kind>.dwip         k-means / KDE prototypes from ``fit-proto``
    eval-<method>.json         EvalReport (deterministic)
    eval-<method>.timing.json  wall-clock numbers for the same run
    sweep-<domain>.csv         lambda sweep
    report.md, report.csv      merged comparison table
"""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..errors import MissingArtifact
from ..estimator import EstimatorConfig, estimate_factors
from ..prototypes import PrototypeStore, fit_prototype
from ..synthdata import gen_dataset, stack, suite_by_name
from ..toymodel import (ImageEncoder, TextEncoder, encode_image, encode_text, init_decoder,
                        predict_from_features, train_decoder)
from ..weightspace import WeightSet, ws_interpolate
from .config import RunConfig
from .formats import (CheckpointMeta, load_checkpoint, load_protos, save_checkpoint,
                      save_protos)
from .metrics import factor_histograms, histogram_entropy, miou

log = logging.getLogger(__name__)

ROUTE_THRESHOLD = 0.9

DWI_VARIANTS = {
    "dwi": {},
    "dwi-argmax": {"decision_rule": "argmax"},
    "dwi-image-only": {"fusion": "image_only"},
    "dwi-text-only": {"fusion": "text_only"},
    "dwi-kmeans": {"proto_kind": "kmeans"},
    "dwi-kde": {"proto_kind": "kde"},
}


# ------------------------------------------------------------------------- data


@dataclass(frozen=True)
class DomainData:
    name: str
    class_names: tuple[str, ...]
    features: np.ndarray     # (N, H, W, d_e) f32
    labels: np.ndarray       # (N, H, W)
    pooled_img: np.ndarray   # (N, d_e) f64
    class_embeds: np.ndarray  # (K, d_t)
    pooled_text: np.ndarray  # (d_t,)


def encoders(cfg: RunConfig) -> tuple[ImageEncoder, TextEncoder]:
    return _encoders(cfg.image_seed, cfg.d_e, cfg.text_seed, cfg.d_t)


@lru_cache(maxsize=4)
def _encoders(image_seed, d_e, text_seed, d_t):
    return ImageEncoder(image_seed, d_e), TextEncoder(text_seed, d_t)


def domain_spec(name: str):
    specs = suite_by_name()
    if name not in specs:
        raise MissingArtifact(f"unknown domain {name!r}; known: {sorted(specs)}")
    return specs[name]


@lru_cache(maxsize=16)
def _domain_data(name, split, n, data_seed, image_seed, d_e, text_seed, d_t) -> DomainData:
    spec = domain_spec(name)
    img_enc, txt_enc = _encoders(image_seed, d_e, text_seed, d_t)
    images, labels = stack(gen_dataset(spec, n, data_seed, split))
    feats = np.empty(images.shape[:3] + (d_e,), dtype=np.float32)
    pooled = np.empty((n, d_e))
    for i, im in enumerate(images):
        feats[i], pooled[i] = encode_image(img_enc, im)
    class_embeds, pooled_text = encode_text(txt_enc, spec.class_names)
    for a in (feats, labels, pooled, class_embeds, pooled_text):
        a.setflags(write=False)
    return DomainData(name, spec.class_names, feats, labels, pooled, class_embeds, pooled_text)


def domain_data(cfg: RunConfig, name: str, split: str) -> DomainData:
    n = {"train": cfg.n_train, "val": cfg.n_val}[split]
    return _domain_data(name, split, n, cfg.data_seed, cfg.image_seed, cfg.d_e, cfg.text_seed, cfg.d_t)


# -------------------------------------------------------------------- artifacts


def _out(out) -> Path:
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def ckpt_path(out, name: str) -> Path:
    return Path(out) / ("pretrain.dwic" if name == "pretrain" else f"ft-{name}.dwic")


def protos_path(out, kind: str = "mvn") -> Path:
    return Path(out) / ("protos.dwip" if kind == "mvn" else f"protos-{kind}.dwip")


def _load_ckpt(out, name: str) -> WeightSet:
    p = ckpt_path(out, name)
    if not p.exists():
        raise MissingArtifact(f"checkpoint {p} not found")
    return load_checkpoint(p)


def _meta(cfg: RunConfig) -> CheckpointMeta:
    return CheckpointMeta(cfg.d_e, cfg.hidden, cfg.d_t, cfg.image_seed, cfg.text_seed, cfg.init_seed)


def _fit_domain(cfg: RunConfig, name: str, kind: str = "mvn"):
    data = domain_data(cfg, name, "train")
    n = min(cfg.n_proto, data.pooled_img.shape[0])
    img = data.pooled_img[:n]
    # the vocabulary is fixed per domain, so every text sample is the same vector
    txt = np.tile(data.pooled_text, (n, 1))
    kw = dict(epsilon_rel=cfg.epsilon_rel, k=cfg.kmeans_k, iters=cfg.kmeans_iters, seed=cfg.kmeans_seed)
    return fit_prototype(img, kind, **kw), fit_prototype(txt, kind, **kw)


# ---------------------------------------------------------------------- training


def run_pretrain(cfg: RunConfig, out) -> Path:
    """Train the decoder on the pre-training domain and start the prototype store."""
    out = _out(out)
    data = domain_data(cfg, cfg.pretrain_domain, "train")
    theta0 = init_decoder(cfg.d_e, cfg.hidden, cfg.d_t, seed=cfg.init_seed)
    t = time.perf_counter()
    theta = train_decoder(data.features, data.labels, data.class_embeds, theta0, cfg.train_config(0))
    log.info("pretrain on %s: %.1fs", cfg.pretrain_domain, time.perf_counter() - t)
    path = ckpt_path(out, "pretrain")
    save_checkpoint(path, theta, _meta(cfg))

    store = PrototypeStore("mvn")
    store.add(cfg.pretrain_domain, *_fit_domain(cfg, cfg.pretrain_domain))
    save_protos(protos_path(out), store)
    return path


def run_finetune(cfg: RunConfig, out, domain: str, init: str = "pretrain") -> Path:
    """Fine-tune ``init`` on ``domain`` alone and append that domain's MVN prototypes.

    ``init`` is ``"pretrain"`` or the name of an earlier fine-tune; the
    result is written to ``ft-<domain>.dwic`` or ``ft-<init>+<domain>.dwic``.
    """
    out = _out(out)
    theta_init = _load_ckpt(out, init)
    data = domain_data(cfg, domain, "train")
    index = cfg.seen_domains.index(domain) if domain in cfg.seen_domains else len(cfg.seen_domains)
    t = time.perf_counter()
    theta = train_decoder(data.features, data.labels, data.class_embeds, theta_init, cfg.train_config(index))
    log.info("finetune %s on %s: %.1fs", init, domain, time.perf_counter() - t)
    name = domain if init == "pretrain" else f"{init}+{domain}"
    path = ckpt_path(out, name)
    save_checkpoint(path, theta, _meta(cfg))

    ppath = protos_path(out)
    if not ppath.exists():
        raise MissingArtifact(f"prototype store {ppath} not found; run pretrain first")
    store = load_protos(ppath)
    if domain not in store.names:
        store.add(domain, *_fit_domain(cfg, domain))
        save_protos(ppath, store)
    return path


def run_fit_proto(cfg: RunConfig, out, kind: str) -> Path:
    """Fit prototypes of ``kind`` for every seen domain, in factor order."""
    out = _out(out)
    store = PrototypeStore(kind)
    for name in cfg.seen_domains:
        store.add(name, *_fit_domain(cfg, name, kind))
    path = protos_path(out, kind)
    save_protos(path, store)
    return path


# -------------------------------------------------------------------- evaluation


def _parse_method(method: str):
    if method == "pretrained":
        return "pretrained", None
    if method.startswith("finetuned:"):
        return "finetuned", method.split(":", 1)[1]
    if method in DWI_VARIANTS:
        return "dwi", DWI_VARIANTS[method]
    raise ValueError(f"unknown method {method!r}")


def _dwi_inputs(cfg: RunConfig, out, kind: str):
    path = protos_path(out, kind)
    if not path.exists():
        raise MissingArtifact(f"prototype store {path} not found")
    store = load_protos(path)
    missing = [n for n in cfg.seen_domains if n not in store.names]
    if missing:
        raise MissingArtifact(f"prototype store lacks domains {missing}")
    store = store.subset(cfg.seen_domains)
    theta_pr = _load_ckpt(out, "pretrain")
    theta_ft = [_load_ckpt(out, d) for d in cfg.finetune_domains]
    return store, theta_pr, theta_ft


def evaluate(cfg: RunConfig, out, method: str, domains: Sequence[str]) -> tuple[dict, dict]:
    """Evaluate one method; returns ``(report, timing)``."""
    family, arg = _parse_method(method)
    report = {"method": method, "domains": {}, "config": cfg.echo()}
    timing = {"method": method, "domains": {}}

    if family == "dwi":
        ecfg = cfg.estimator_config(**arg)
        store, theta_pr, theta_ft = _dwi_inputs(cfg, out, ecfg.proto_kind)
        report["factor_domains"] = store.names
    else:
        theta = _load_ckpt(out, "pretrain" if family == "pretrained" else arg)

    for name in domains:
        data = domain_data(cfg, name, "val")
        t0 = time.perf_counter()
        entry = {"n": int(data.labels.shape[0]), "num_classes": len(data.class_names)}
        if family != "dwi":
            preds = predict_from_features(data.features, data.class_embeds, theta)
            timing["domains"][name] = {"infer_s": time.perf_counter() - t0}
        else:
            preds = np.empty_like(data.labels)
            lams = np.empty((data.labels.shape[0], len(store)))
            build_s = infer_s = 0.0
            for i in range(data.labels.shape[0]):
                ta = time.perf_counter()
                fv = estimate_factors(data.pooled_img[i], data.pooled_text, store, ecfg)
                tb = time.perf_counter()
                # one decoder instantiation per sample
                theta_i = ws_interpolate(theta_pr, theta_ft, fv)
                tc = time.perf_counter()
                preds[i] = predict_from_features(data.features[i], data.class_embeds, theta_i)
                td = time.perf_counter()
                lams[i] = fv.lambdas
                build_s += tc - tb
                infer_s += (tb - ta) + (td - tc)
            hist = factor_histograms(lams)
            entry.update({
                "frac_max_gt_0_9": float(np.mean(lams.max(axis=1) > ROUTE_THRESHOLD)),
                "mean_lambda": [float(x) for x in lams.mean(axis=0)],
                "hist": hist.tolist(),
                "hist_entropy": histogram_entropy(hist),
            })
            timing["domains"][name] = {"decoder_build_s": build_s, "infer_s": infer_s}
        entry["miou"] = miou(list(preds), list(data.labels), len(data.class_names))
        report["domains"][name] = entry
    return report, timing


def report_filename(method: str, tag: str = "") -> str:
    safe = method.replace(":", "_").replace("+", "_")
    return f"eval-{safe}{'-' + tag if tag else ''}.json"


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run_eval(cfg: RunConfig, out, method: str | None = None, domains: Iterable[str] | None = None,
             tag: str = "") -> dict:
    out = _out(out)
    method = method or cfg.method
    domains = list(domains) if domains is not None else list(cfg.all_domains)
    report, timing = evaluate(cfg, out, method, domains)
    path = out / report_filename(method, tag)
    _dump_json(path, report)
    _dump_json(path.with_suffix(".timing.json"), timing)
    return report


def run_sweep_lambda(cfg: RunConfig, out, domain: str | None = None, steps: int | None = None) -> Path:
    """Manual factor sweep between pretrain.dwic and one fine-tuned decoder.

    Writes ``lambda,miou_base,miou_ft`` rows for ``steps`` evenly spaced
    factors in [0, 1]; the estimator is bypassed.
    """
    out = _out(out)
    domain = domain or cfg.finetune_domains[0]
    steps = steps or cfg.sweep_steps
    theta_pr = _load_ckpt(out, "pretrain")
    theta_ft = _load_ckpt(out, domain)
    base = domain_data(cfg, cfg.pretrain_domain, "val")
    ft = domain_data(cfg, domain, "val")

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lambda", "miou_base", "miou_ft"])
    for k in range(steps):
        lam = k / (steps - 1)
        theta = ws_interpolate(theta_pr, [theta_ft], [0.0, lam])
        row = [lam]
        for d in (base, ft):
            preds = predict_from_features(d.features, d.class_embeds, theta)
            row.append(miou(list(preds), list(d.labels), len(d.class_names)))
        w.writerow([repr(float(x)) for x in row])
    path = out / f"sweep-{domain}.csv"
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def read_sweep(path) -> list[dict[str, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


# ---------------------------------------------------------------------- reports

METHOD_ORDER = ("pretrained", "finetuned", "dwi", "dwi-argmax", "dwi-image-only",
                "dwi-text-only", "dwi-kmeans", "dwi-kde")
MISSING = "—"


def _method_key(method: str):
    fam = "finetuned" if method.startswith("finetuned:") else method
    rank = METHOD_ORDER.index(fam) if fam in METHOD_ORDER else len(METHOD_ORDER)
    return rank, method


def run_report(paths: Sequence, out=None) -> tuple[str, str]:
    """Merge EvalReports into a methods x domains mIoU table (markdown, CSV)."""
    reports = []
    for p in paths:
        try:
            reports.append(json.loads(Path(p).read_text(encoding="utf-8")))
        except OSError as e:
            raise MissingArtifact(f"cannot read report {p}: {e}") from e
    domains: list[str] = []
    for r in reports:
        for d in r["domains"]:
            if d not in domains:
                domains.append(d)
    rows = {}
    for r in sorted(reports, key=lambda r: _method_key(r["method"])):
        rows[r["method"]] = {d: v["miou"] for d, v in r["domains"].items()}

    md = io.StringIO()
    md.write("| method | " + " | ".join(domains) + " |\n")
    md.write("|---|" + "---|" * len(domains) + "\n")
    for m, cells in rows.items():
        vals = [f"{cells[d]:.4f}" if d in cells else MISSING for d in domains]
        md.write(f"| {m} | " + " | ".join(vals) + " |\n")

    cbuf = io.StringIO()
    w = csv.writer(cbuf, lineterminator="\n")
    w.writerow(["method"] + domains)
    for m, cells in rows.items():
        w.writerow([m] + [repr(cells[d]) if d in cells else MISSING for d in domains])

    md_text, csv_text = md.getvalue(), cbuf.getvalue()
    if out is not None:
        out = _out(out)
        (out / "report.md").write_text(md_text, encoding="utf-8")
        (out / "report.csv").write_text(csv_text, encoding="utf-8")
    return md_text, csv_text


# ----------------------------------------------------------------- full pipeline


def all_methods(cfg: RunConfig) -> list[str]:
    methods = ["pretrained"] + [f"finetuned:{d}" for d in cfg.finetune_domains]
    if len(cfg.finetune_domains) > 1:
        methods.append("finetuned:" + "+".join(cfg.finetune_domains))
    return methods + list(DWI_VARIANTS)


def sequential_name(cfg: RunConfig) -> str:
    return "+".join(cfg.finetune_domains)


def run_all(cfg: RunConfig, out) -> dict:
    """Every stage of the reference experiment, in order."""
    out = _out(out)
    (out / "config.cfg").write_text(cfg.to_text(), encoding="utf-8")
    run_pretrain(cfg, out)
    for d in cfg.finetune_domains:
        run_finetune(cfg, out, d)
    # plain sequential fine-tuning baseline: each stage starts from the previous one
    if cfg.finetune_domains:
        chain = cfg.finetune_domains[0]
        for d in cfg.finetune_domains[1:]:
            run_finetune(cfg, out, d, init=chain)
            chain = f"{chain}+{d}"
    for kind in ("kmeans", "kde"):
        run_fit_proto(cfg, out, kind)
    reports = {m: run_eval(cfg, out, m) for m in all_methods(cfg)}
    if cfg.finetune_domains:
        run_sweep_lambda(cfg, out)
    run_report([out / report_filename(m) for m in reports], out)
    return reports
