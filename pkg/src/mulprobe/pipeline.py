"""Pipeline stages behind the CLI. Each stage reads and writes under ``cfg.out``."""
from __future__ import annotations

import logging
from collections import Counter
from pathlib import Path
from typing import Optional

from . import __version__
from .arith import Problem, compute_load, make_rng
from .artifacts import (
    atomic_write_bytes,
    atomic_write_text,
    file_sha256,
    make_header,
    read_csv,
    read_header,
    read_json,
    read_jsonl,
    write_csv,
    write_json,
    write_jsonl,
)
from .backend import BackendError, CapabilityError, ScoringContext, backend_from_config, canonical_json, map_bounded, sha256_hex
from .config import RunConfig
from .cost import HeuristicKind
from .dataset import (
    GENERATOR_VERSION,
    HdsItem,
    TrapItem,
    build_hds,
    build_multimodal_suite,
    build_perturbation_pairs,
    build_traps,
    exclusion_keys,
    perturbation_to_dict,
    split_counts,
    suite_from_dict,
    suite_to_dict,
)
from .geometry import group_gap, load_adapter, save_adapter, synthetic_adapters
from .probe import (
    TemplateBank,
    ablation_rows,
    aggregate_contrastive,
    aggregate_probe,
    contrastive_probe,
    probe_problem,
    style_shift_ablation,
)
from .render import ClipLibrary, MissingClipsError, Representation, render
from .stats import AccuracyRecord, accuracy_summary, extract_answer, fit_error_rate, fit_logistic, plot_data
from .traces import ContrastivePair, build_trace_dataset, gen_contrastive_pair, split_train_val

log = logging.getLogger(__name__)

TRACE_KINDS = (HeuristicKind.RC, HeuristicKind.DD, HeuristicKind.OT, HeuristicKind.STYLE)


class PartialFailure(RuntimeError):
    """Too many per-item backend failures."""


class Stage:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = cfg.out

    def path(self, *parts) -> Path:
        return self.out.joinpath(*parts)

    def manifest_hash(self) -> Optional[str]:
        p = self.path("data", "manifest.json")
        return read_json(p)["content_hash"] if p.exists() else None

    def header(self, kind: str, with_manifest: bool = True) -> dict:
        return make_header(self.cfg.hash(), self.manifest_hash() if with_manifest else None, kind)

    # -- shared loaders --

    def suite(self) -> list:
        _, recs = read_jsonl(self.path("data", "suite.jsonl"))
        return [suite_from_dict(r) for r in recs]

    def hds(self) -> list:
        _, recs = read_jsonl(self.path("data", "hds.jsonl"))
        return [HdsItem.from_dict(r) for r in recs]

    def traps(self) -> list:
        _, recs = read_jsonl(self.path("data", "traps.jsonl"))
        return [TrapItem.from_dict(r) for r in recs]

    def probe_items(self) -> list:
        items = sorted((it for it in self.hds() if it.split == self.cfg.probe_split), key=lambda it: it.id)
        if self.cfg.probe_limit:
            items = items[: self.cfg.probe_limit]
        return items

    def context(self, p: Problem, rep: str, clips: Optional[ClipLibrary] = None) -> ScoringContext:
        inst = render(p, rep, self.cfg.style_config, clips, self.cfg.image_format)
        return ScoringContext.from_rendered(inst, p)


# --- gen -------------------------------------------------------------------------------


def cmd_gen(cfg: RunConfig) -> dict:
    st = Stage(cfg)
    params = cfg.cost
    hdr = st.header("dataset", with_manifest=False)
    suite = build_multimodal_suite(cfg.suite_count, cfg.templates, cfg.seed, cfg.paper_mode, cfg.eval_representations)
    hds = build_hds(cfg.hds_count, cfg.seed, params=params)
    traps = build_traps(cfg.trap_count, cfg.seed, hds, params)
    perts = build_perturbation_pairs(cfg.seed, cfg.perturbation_count, params)
    excl = exclusion_keys(hds, traps, [e["problem"] for e in suite])
    excl_set = frozenset(excl)

    files = {}
    files["data/suite.jsonl"] = write_jsonl(st.path("data", "suite.jsonl"), [suite_to_dict(e) for e in suite], hdr)
    files["data/hds.jsonl"] = write_jsonl(st.path("data", "hds.jsonl"), [it.to_dict() for it in hds], hdr)
    files["data/traps.jsonl"] = write_jsonl(st.path("data", "traps.jsonl"), [t.to_dict() for t in traps], hdr)
    files["data/perturbations.jsonl"] = write_jsonl(
        st.path("data", "perturbations.jsonl"), [perturbation_to_dict(r) for r in perts], hdr)
    files["data/exclusions.json"] = write_json(st.path("data", "exclusions.json"), {"keys": excl}, hdr)

    trace_counts = {}
    for i, h in enumerate(TRACE_KINDS):
        traces = build_trace_dataset(h, cfg.trace_count, cfg.seed + 1000 * (i + 1), excl_set)
        train, val = split_train_val(traces, seed=cfg.seed + i)
        val_ids = {t.problem_id for t in val}
        recs = []
        for t in traces:
            rec = t.to_record()
            rec["split"] = "val" if t.problem_id in val_ids else "train"
            recs.append(rec)
        name = f"data/traces_{h.value.lower()}.jsonl"
        files[name] = write_jsonl(st.path(*name.split("/")), recs, hdr)
        trace_counts[h.value] = {"train": len(train), "val": len(val)}

    rng = make_rng(cfg.seed + 31337)
    pairs, skipped = [], 0
    for it in sorted(hds, key=lambda x: x.id):
        if it.split != cfg.probe_split:
            continue
        try:
            pairs.append(gen_contrastive_pair(it.problem, it.target, rng))
        except ValueError:
            skipped += 1
    files["data/contrastive.jsonl"] = write_jsonl(st.path("data", "contrastive.jsonl"), [p.to_dict() for p in pairs], hdr)

    counts = {
        "suite": len(suite),
        "suite_representations": {r: len(suite) for r in cfg.eval_representations},
        "hds_split": split_counts(hds),
        "hds_target": dict(sorted(Counter(it.target.value for it in hds).items())),
        "hds_family": dict(sorted(Counter(it.family for it in hds).items())),
        "traps": dict(sorted(Counter(t.kind for t in traps).items())),
        "perturbations": len(perts),
        "exclusions": len(excl),
        "traces": trace_counts,
        "contrastive_pairs": len(pairs),
        "contrastive_skipped": skipped,
    }
    hashes = {k: file_sha256(v) for k, v in sorted(files.items())}
    manifest = {
        "seed": cfg.seed,
        "generator_version": GENERATOR_VERSION,
        "code_version": __version__,
        "cost_params": cfg.cost_params,
        "counts": counts,
        "files": hashes,
        "content_hash": sha256_hex(canonical_json(hashes)),
    }
    write_json(st.path("data", "manifest.json"), manifest, hdr)
    snapshot = cfg.to_dict()
    snapshot.pop("output_dir", None)
    write_json(st.path("config.json"), snapshot, hdr)
    return manifest


# --- render ----------------------------------------------------------------------------

_EXT = {"text/plain": "txt", "image/png": "png", "image/svg+xml": "svg", "audio/wav": "wav"}


def cmd_render(cfg: RunConfig, clips_dir=None) -> dict:
    st = Stage(cfg)
    clips = ClipLibrary.load(clips_dir) if clips_dir else None
    index, skipped = [], Counter()
    for e in st.suite():
        p = e["problem"]
        for rep in e["representations"]:
            try:
                inst = render(p, rep, cfg.style_config, clips, cfg.image_format)
            except MissingClipsError:
                skipped[rep] += 1
                continue
            rel = f"renders/{p.id}/{rep}.{_EXT[inst.media_type]}"
            raw = inst.payload.encode("utf-8") if isinstance(inst.payload, str) else inst.payload
            atomic_write_bytes(st.path(*rel.split("/")), raw)
            index.append({"problem_id": p.id, "representation": rep, "path": rel,
                          "sha256": inst.payload_hash, "media_type": inst.media_type})
    write_jsonl(st.path("renders", "index.jsonl"), index, st.header("render_index"))
    return {"rendered": len(index), "skipped": dict(skipped)}


# --- eval ------------------------------------------------------------------------------


def _record_for(p: Problem, rep: str, text: Optional[str], error: Optional[str]) -> AccuracyRecord:
    m = compute_load(p.a, p.b)
    ans = extract_answer(text, len(str(p.product))) if text is not None else None
    return AccuracyRecord(p.id, rep, m.load_C, ans == p.product, ans, p.product,
                          m.nonzero_products + m.carry_count, error)


def write_fit_reports(records: list, outdir: Path, header: dict) -> dict:
    """Accuracy table, logistic fits, error-rate fits and plot data per representation."""
    by_rep = {}
    for r in records:
        if r.error is None:
            by_rep.setdefault(r.representation, []).append(r)
    fits, rates, plots = [], [], []
    for rep in sorted(by_rep):
        rs = by_rep[rep]
        row = {"representation": rep, "n": len(rs)}
        try:
            f = fit_logistic(rs)
            row.update(intercept=f.beta0, slope=f.beta1, r2=f.r2, r2_mcfadden=f.mcfadden_r2, c50=f.c50,
                       converged=f.converged, separated=f.separated, iterations=f.iterations, note="")
            plots.extend(plot_data(f, rs, rep))
        except ValueError as exc:
            row.update(note=str(exc))
        fits.append(row)
        for proxy in ("load", "carry"):
            e = fit_error_rate(rs, proxy)
            rates.append({"representation": rep, **e.to_dict()})
    fit_cols = ["representation", "n", "intercept", "slope", "r2", "r2_mcfadden", "c50",
                "converged", "separated", "iterations", "note"]
    write_csv(outdir / "accuracy.csv", accuracy_summary(records), header,
              ["representation", "n", "accuracy", "se", "mean_load", "errors"])
    write_csv(outdir / "fits.csv", fits, header, fit_cols)
    write_csv(outdir / "error_rate.csv", rates, header, ["representation", "ops_proxy", "p", "n_buckets", "excluded_buckets"])
    write_csv(outdir / "plot_data.csv", plots, header,
              ["representation", "kind", "load", "predicted", "empirical", "se", "n"])
    return {"fits": fits, "error_rate": rates}


def _generate_all(st: Stage, backend, jobs: list, clips=None) -> list:
    """jobs: (Problem, rep). Returns (record, raw) in job order; failures become error records."""
    budget = st.cfg.budget

    def one(job):
        p, rep = job
        try:
            res = backend.generate(st.context(p, rep, clips), budget)
            return _record_for(p, rep, res.text, None), {"problem_id": p.id, "representation": rep, **res.to_dict()}
        except (BackendError, CapabilityError) as exc:
            return _record_for(p, rep, None, str(exc)), {"problem_id": p.id, "representation": rep, "error": str(exc)}

    return map_bounded(one, jobs, st.cfg.parallelism)


def cmd_eval(cfg: RunConfig, clips_dir=None) -> dict:
    st = Stage(cfg)
    clips = ClipLibrary.load(clips_dir) if clips_dir else None
    backend = backend_from_config(cfg.backend_config("eval"), st.path("cache", "eval_replay.jsonl"))
    jobs = []
    for e in st.suite():
        for rep in cfg.eval_representations:
            if Representation(rep) is Representation.AUDIO and clips is None:
                continue
            jobs.append((e["problem"], rep))
    out = _generate_all(st, backend, jobs, clips)
    records = [r for r, _ in out]
    hdr = st.header("eval")
    write_jsonl(st.path("eval", "records.jsonl"), [r.to_dict() for r in records], hdr)
    write_jsonl(st.path("eval", "completions.jsonl"), [raw for _, raw in out], hdr)
    summary = write_fit_reports(records, st.path("eval"), hdr)
    failures = sum(1 for r in records if r.error)
    summary["failures"] = failures
    summary["n"] = len(records)
    if records and failures / len(records) > cfg.failure_threshold:
        raise PartialFailure(f"{failures}/{len(records)} eval items failed (threshold {cfg.failure_threshold})")
    return summary


def cmd_stats(cfg: RunConfig, records_path=None, outdir=None) -> dict:
    st = Stage(cfg)
    path = Path(records_path) if records_path else st.path("eval", "records.jsonl")
    _, recs = read_jsonl(path)
    records = [AccuracyRecord.from_dict(r) for r in recs]
    return write_fit_reports(records, Path(outdir) if outdir else st.path("stats"), st.header("stats"))


# --- probe / contrast / ablate ------------------------------------------------------------


def _probe_backend(cfg: RunConfig):
    b = backend_from_config(cfg.backend_config("probe"), Path(cfg.output_dir) / "cache" / "probe_replay.jsonl")
    if not getattr(b, "probe_capable", True):
        raise CapabilityError(f"{b.name} backend is probe-incapable: it cannot score forced continuations")
    return b


def _run_probes(st: Stage, backend, items: list, bank: TemplateBank) -> list:
    jobs = [(it, rep) for it in items for rep in st.cfg.probe_representations]

    def one(job):
        it, rep = job
        target = it.target.value if isinstance(it, HdsItem) else it.tempting_heuristic.value
        family = it.family if isinstance(it, HdsItem) else it.kind
        return probe_problem(st.context(it.problem, rep), bank, backend, it.id, rep, target, family)

    return map_bounded(one, jobs, st.cfg.parallelism)


_AGG_COLS = ["metric", "representation", "value", "se", "n"]


def _probe_accuracy(st: Stage, backend, items: list) -> tuple:
    jobs = [(it.problem, rep) for it in items for rep in st.cfg.probe_representations]
    out = _generate_all(st, backend, jobs)
    by_rep, correct = {}, {}
    for (p, rep), (rec, _) in zip(jobs, out):
        by_rep.setdefault(rep, []).append(1.0 if rec.correct else 0.0)
        correct[(p.id, rep)] = rec.correct
    return by_rep, correct


def cmd_probe(cfg: RunConfig) -> dict:
    st = Stage(cfg)
    backend = _probe_backend(cfg)
    bank = TemplateBank.default(cfg.bank_profile)
    items = st.probe_items()
    results = _run_probes(st, backend, items, bank)
    trap_results = _run_probes(st, backend, st.traps(), bank)
    acc, _ = _probe_accuracy(st, backend, items)
    hdr = st.header("probe")
    hdr_bank = dict(hdr, bank_hash=bank.hash())
    write_jsonl(st.path("probe", "results.jsonl"), [r.to_dict() for r in results], hdr_bank)
    write_jsonl(st.path("probe", "trap_results.jsonl"), [r.to_dict() for r in trap_results], hdr_bank)
    rows = aggregate_probe(results, acc)
    write_csv(st.path("probe", "aggregate.csv"), rows, hdr, _AGG_COLS)
    write_csv(st.path("probe", "trap_aggregate.csv"), aggregate_probe(trap_results), hdr, _AGG_COLS)
    return {"items": len(items), "results": len(results), "trap_results": len(trap_results)}


def cmd_contrast(cfg: RunConfig) -> dict:
    st = Stage(cfg)
    backend = _probe_backend(cfg)
    _, recs = read_jsonl(st.path("data", "contrastive.jsonl"))
    pairs = [ContrastivePair(r["problem_id"], HeuristicKind(r["heuristic"]), r["correct_step"],
                             r["incorrect_step"], r["corruption"]) for r in recs]
    problems = {it.id: it.problem for it in st.hds()}
    jobs = [(pr, rep) for pr in pairs for rep in cfg.probe_representations]

    def one(job):
        pr, rep = job
        return contrastive_probe(pr, st.context(problems[pr.problem_id], rep), backend, rep)

    results = map_bounded(one, jobs, cfg.parallelism)
    hdr = st.header("contrast")
    write_jsonl(st.path("contrast", "results.jsonl"), [r.to_dict() for r in results], hdr)
    write_csv(st.path("contrast", "aggregate.csv"), aggregate_contrastive(results), hdr, _AGG_COLS)
    return {"pairs": len(pairs), "results": len(results)}


def cmd_ablate(cfg: RunConfig) -> dict:
    st = Stage(cfg)
    backend = _probe_backend(cfg)
    items = st.probe_items()
    bal = _run_probes(st, backend, items, TemplateBank.default("balanced"))
    mis = _run_probes(st, backend, items, TemplateBank.default("style_mismatch"))
    _, correct = _probe_accuracy(st, backend, items)
    report = style_shift_ablation(bal, mis, correct)
    hdr = st.header("ablate")
    write_json(st.path("ablate", "report.json"), report, hdr)
    write_csv(st.path("ablate", "table.csv"), ablation_rows(report), hdr,
              ["profile", "representation", "n", "match_rate", "accuracy", "DD_std", "OT_std", "RC_std", "mean_std"])
    return report


# --- geometry --------------------------------------------------------------------------------


def cmd_geometry(cfg: RunConfig, adapter_dirs=(), synthetic_dir=None, outdir=None) -> dict:
    st = Stage(cfg)
    dirs = list(adapter_dirs)
    if synthetic_dir:
        for u in synthetic_adapters(seed=cfg.seed):
            dirs.append(save_adapter(u, Path(synthetic_dir) / u.adapter_id))
    if len(dirs) < 2:
        raise ValueError("geometry needs at least two adapter directories")
    adapters = [load_adapter(d) for d in dirs]
    rep = group_gap(adapters)
    out = Path(outdir) if outdir else st.path("geometry")
    hdr = st.header("geometry")
    ids = list(rep.adapter_ids)
    rows = [{"adapter": a, **{b: float(rep.matrix[i, j]) for j, b in enumerate(ids)}} for i, a in enumerate(ids)]
    write_csv(out / "matrix.csv", rows, hdr, ["adapter"] + ids)
    write_json(out / "report.json", rep.to_dict(), hdr)
    return rep.to_dict()


# --- report / verify -------------------------------------------------------------------------


def _fmt(v, pct: bool = False, signed: bool = False) -> str:
    if v in (None, ""):
        return "n/a"
    v = float(v)
    if pct:
        return f"{100 * v:.1f}%"
    return f"{v:+.4f}" if signed else f"{v:.4f}"


def cmd_report(cfg: RunConfig) -> dict:
    st = Stage(cfg)
    summary = {}
    lines = ["# Run report", "", f"config hash `{cfg.hash()}`, dataset manifest `{st.manifest_hash()}`", ""]
    mf = st.path("data", "manifest.json")
    if mf.exists():
        m = read_json(mf)
        summary["counts"] = m["counts"]
        lines += ["## Dataset", "", f"HDS splits: {m['counts']['hds_split']}", f"HDS targets: {m['counts']['hds_target']}", ""]
    fits = st.path("eval", "fits.csv")
    if fits.exists():
        _, rows = read_csv(fits)
        summary["fits"] = rows
        lines += ["## Accuracy vs load", "", "| representation | intercept | slope | R² | c50 |", "|---|---|---|---|---|"]
        for r in rows:
            lines.append(f"| {r['representation']} | {_fmt(r['intercept'])} | {_fmt(r['slope'])} | {_fmt(r['r2'])} | {_fmt(r['c50'])} |")
        lines.append("")
    for name, title in (("probe/aggregate.csv", "Probe"), ("probe/trap_aggregate.csv", "Traps"),
                        ("contrast/aggregate.csv", "Contrastive step probe")):
        p = st.path(*name.split("/"))
        if not p.exists():
            continue
        _, rows = read_csv(p)
        summary[name] = rows
        lines += [f"## {title}", "", "| metric | representation | value | SE | n |", "|---|---|---|---|---|"]
        for r in rows:
            pct = r["metric"].startswith(("accuracy", "target_support", "winner_share", "preference"))
            signed = r["metric"].startswith(("delta_loss", "loss_gap"))
            lines.append(f"| {r['metric']} | {r['representation']} | {_fmt(r['value'], pct, signed)} | "
                         f"{_fmt(r['se'], pct)} | {r['n']} |")
        lines.append("")
    ab = st.path("ablate", "table.csv")
    if ab.exists():
        _, rows = read_csv(ab)
        summary["ablation"] = rows
        lines += ["## Style-shift ablation", "", "| profile | representation | match | accuracy | DD std | OT std | RC std | mean std |",
                  "|---|---|---|---|---|---|---|---|"]
        for r in rows:
            lines.append(f"| {r['profile']} | {r['representation']} | {_fmt(r['match_rate'], True)} | {_fmt(r['accuracy'], True)} | "
                         f"{_fmt(r['DD_std'])} | {_fmt(r['OT_std'])} | {_fmt(r['RC_std'])} | {_fmt(r['mean_std'])} |")
        lines.append("")
    geo = st.path("geometry", "report.json")
    if geo.exists():
        g = read_json(geo)
        summary["geometry"] = {k: g[k] for k in ("same_mean", "cross_mean", "gap")}
        lines += ["## Adapter geometry", "",
                  f"same-heuristic {_fmt(g['same_mean'])} vs cross-heuristic {_fmt(g['cross_mean'])}, gap {_fmt(g['gap'])}", ""]
    hdr = st.header("report")
    write_json(st.path("report", "summary.json"), summary, hdr)
    atomic_write_text(st.path("report", "summary.md"), "\n".join(lines))
    return summary


def cmd_verify(cfg: RunConfig) -> list:
    """Re-check dataset hashes, render hashes and every provenance header. Returns problems found."""
    st = Stage(cfg)
    problems = []
    mf = st.path("data", "manifest.json")
    if not mf.exists():
        return [f"{mf}: missing"]
    m = read_json(mf)
    for rel, digest in m["files"].items():
        p = st.path(*rel.split("/"))
        if not p.exists():
            problems.append(f"{rel}: missing")
        elif file_sha256(p) != digest:
            problems.append(f"{rel}: content hash mismatch")
    if sha256_hex(canonical_json(m["files"])) != m["content_hash"]:
        problems.append("data/manifest.json: content_hash does not match file hashes")
    want_cfg, want_mf = cfg.hash(), m["content_hash"]
    for p in sorted(st.out.rglob("*")):
        if p.suffix not in (".json", ".jsonl", ".csv") or "cache" in p.relative_to(st.out).parts:
            continue
        rel = p.relative_to(st.out).as_posix()
        h = read_header(p)
        if h is None:
            problems.append(f"{rel}: no provenance header")
            continue
        if h.get("config_hash") != want_cfg:
            problems.append(f"{rel}: config hash {h.get('config_hash')} != {want_cfg}")
        if h.get("manifest_hash") not in (None, want_mf):
            problems.append(f"{rel}: manifest hash {h.get('manifest_hash')} != {want_mf}")
        if h.get("code_version") != __version__:
            problems.append(f"{rel}: written by code version {h.get('code_version')}")
    idx = st.path("renders", "index.jsonl")
    if idx.exists():
        _, recs = read_jsonl(idx)
        for r in recs:
            p = st.path(*r["path"].split("/"))
            if not p.exists() or sha256_hex(p.read_bytes()) != r["sha256"]:
                problems.append(f"{r['path']}: render hash mismatch")
    return problems


def cmd_pipeline(cfg: RunConfig, clips_dir=None) -> dict:
    out = {"gen": cmd_gen(cfg)["counts"]}
    out["render"] = cmd_render(cfg, clips_dir)
    out["eval"] = {k: v for k, v in cmd_eval(cfg, clips_dir).items() if k in ("n", "failures")}
    out["probe"] = cmd_probe(cfg)
    out["contrast"] = cmd_contrast(cfg)
    cmd_ablate(cfg)
    cmd_report(cfg)
    return out
