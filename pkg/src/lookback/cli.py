"""Command-line entry point.

Subcommands: gen-traces, extract, train, eval, decode, map-heads,
export-heatmap. Every option can also come from a JSON file given with
``--config`` (keys are the option names with dashes replaced by
underscores); flags on the command line win over file values.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from collections import Counter
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import classifier as clf_mod
from .classifier import FeatureLayout, TrainConfig
from .decoding import DecodeConfig, check_layout, chunked_sample, guided_decode
from .errors import DegenerateLabelsError, LookbackError, TraceFormatError
from .features import (
    FeatureRow,
    SpanFeatureVector,
    extract_features,
    read_feature_rows,
    trace_lookback,
    write_feature_rows,
)
from .head_map import fit_head_map, head_matrix, save_head_map
from .spans import predefined_spans, sliding_window_spans
from .toy_model import (
    SamplerConfig,
    ToyModelConfig,
    ToyTransformer,
    generate,
    load_model_config,
    save_model_config,
    token_text,
)
from .trace import (
    HALLUCINATED,
    ingest_annotation,
    read_annotation_records,
    read_traces,
    validate_trace,
    write_annotation_records,
    write_traces,
)

log = logging.getLogger("lookback")


class CommandError(LookbackError):
    pass


@dataclass
class RunConfig:
    """Resolved options for one command invocation."""

    command: str
    paths: dict[str, str] = field(default_factory=dict)
    window_size: int = 8
    chunk_size: int = 8
    num_candidates: int = 8
    max_new_tokens: int = 256
    temperature: float = 0.9
    top_p: float = 0.95
    seed: int = 0
    threads: int = 1
    layers: str | None = None
    top_k: int | None = None
    head_mode: str = "largest_magnitude"

    INPUT_KEYS = (
        "traces", "annotations", "features", "classifier", "model", "prompts",
        "source_traces", "target_traces", "scripted_scores", "select_from",
    )

    @classmethod
    def from_namespace(cls, ns: argparse.Namespace) -> RunConfig:
        opts = vars(ns)
        paths = {
            k: str(v)
            for k, v in opts.items()
            if v is not None and (k in cls.INPUT_KEYS or k.startswith("out"))
        }
        known = {f.name for f in fields(cls)} - {"command", "paths"}
        kw = {k: opts[k] for k in known if opts.get(k) is not None}
        cfg = cls(command=ns.command, paths=paths, **kw)
        cfg.check()
        return cfg

    def check(self) -> None:
        for key in self.INPUT_KEYS:
            p = self.paths.get(key)
            if p is not None and not Path(p).exists():
                raise CommandError(f"input path for --{key.replace('_', '-')} does not exist: {p}")
        for name in ("window_size", "chunk_size", "num_candidates", "threads"):
            if getattr(self, name) < 1:
                raise CommandError(f"--{name.replace('_', '-')} must be >= 1")
        if self.max_new_tokens < 0:
            raise CommandError("--max-new-tokens must be >= 0")
        if not self.temperature > 0:
            raise CommandError("--temperature must be > 0")
        if not 0 < self.top_p <= 1:
            raise CommandError("--top-p must be in (0, 1]")


# ---------------------------------------------------------------------------
# helpers


def _parse_layers(text: str, num_layers: int) -> tuple[int, int]:
    try:
        if "-" in text:
            a, b = text.split("-", 1)
            return int(a), int(b)
        return int(text), int(text)
    except ValueError as exc:
        raise CommandError(f"bad --layers value {text!r}; expected 'first-last'") from exc


def _train_config(ns: argparse.Namespace) -> TrainConfig:
    return TrainConfig(
        l2_lambda=ns.l2,
        max_iters=ns.max_iters,
        tolerance=ns.tol,
        seed=ns.seed,
        standardize=ns.standardize,
    )


def _rows_and_layout(rows: Sequence[FeatureRow]) -> tuple[list[SpanFeatureVector], FeatureLayout]:
    if not rows:
        raise CommandError("feature file has no rows")
    shapes = {(r.num_layers, r.num_heads) for r in rows}
    if len(shapes) != 1:
        raise CommandError(f"feature rows mix head layouts {sorted(shapes)}")
    L, H = shapes.pop()
    return [r.features for r in rows], FeatureLayout.full(L, H)


def _apply_selection(
    ns: argparse.Namespace, fvs: list[SpanFeatureVector], layout: FeatureLayout
) -> tuple[list[SpanFeatureVector], FeatureLayout]:
    if ns.layers:
        first, last = _parse_layers(ns.layers, layout.num_layers)
        fvs, layout = clf_mod.restrict_features(
            fvs, layout, clf_mod.layer_indices(layout, first, last)
        )
    if ns.top_k is not None:
        if not ns.select_from:
            raise CommandError("--top-k needs --select-from CLASSIFIER to rank heads")
        ranking = clf_mod.load_classifier(ns.select_from)
        sel = clf_mod.select_heads(ranking, ns.top_k, ns.head_mode)
        fvs, layout = clf_mod.restrict_features(fvs, layout, sel)
    return fvs, layout


def _label_counts(labels: Sequence[int]) -> dict[str, int]:
    c = Counter(labels)
    return {"factual": c.get(1, 0), "hallucinated": c.get(0, 0)}


def two_fold_split(example_ids: Sequence[str], seed: int) -> tuple[set[str], set[str]]:
    """Split distinct example ids in half with a seeded permutation."""
    ids = sorted(set(example_ids))
    perm = np.random.default_rng(seed).permutation(len(ids))
    half = len(ids) // 2
    return {ids[i] for i in perm[:half]}, {ids[i] for i in perm[half:]}


def _emit(report: dict[str, Any], out: str | None) -> None:
    text = json.dumps(report, indent=1)
    print(text)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# commands


def cmd_gen_traces(ns: argparse.Namespace) -> int:
    """Generate a demo corpus with the toy model and a planted annotation rule.

    A hallucinated verdict marks the window with the lowest mean lookback
    ratio as the problematic span, so ratios and labels are correlated.
    """
    out = Path(ns.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if ns.model:
        mcfg = load_model_config(ns.model)
    else:
        mcfg = ToyModelConfig(
            vocab_size=ns.vocab_size,
            d_model=ns.d_model,
            num_layers=ns.num_layers,
            num_heads=ns.num_heads,
            max_seq_len=max(512, ns.prompt_len + ns.max_new_tokens + 1),
            seed=ns.model_seed,
        )
    save_model_config(out / "model.json", mcfg)
    model = ToyTransformer(mcfg)
    sampler = SamplerConfig(
        "greedy" if ns.greedy else "nucleus", ns.temperature, ns.top_p, ns.seed
    )
    rng = np.random.default_rng(ns.seed)
    vocab = np.array([t for t in range(mcfg.vocab_size) if t != ns.eos])
    traces, prompts, anns, full_rows = [], [], [], []
    for i in range(ns.num_examples):
        ex_id = f"demo-{i:04d}"
        prompt = [int(t) for t in rng.choice(vocab, size=ns.prompt_len)]
        gen = generate(
            model, prompt, sampler, ns.max_new_tokens, ns.eos,
            rng=np.random.default_rng([ns.seed, i]), example_id=ex_id,
            retain_full_attention=ns.retain_full_attention,
        )
        traces.append(gen.trace)
        prompts.append({"example_id": ex_id, "prompt": prompt})
        anns.append(_demo_annotation(gen.trace, rng, ns.hallucination_rate))
        if ns.retain_full_attention:
            for t, rows in enumerate(gen.full_attention, start=1):
                full_rows.append({"example_id": ex_id, "step": t, "attention": rows.tolist()})
    write_traces(out / "traces.jsonl", traces)
    write_annotation_records(out / "annotations.jsonl", anns)
    write_annotation_records(out / "prompts.jsonl", prompts)
    if ns.retain_full_attention:
        write_annotation_records(out / "full_attention.jsonl", full_rows)
    n_bad = sum(1 for a in anns if a["verdict"] == "false")
    print(json.dumps({"examples": len(traces), "hallucinated": n_bad, "out_dir": str(out)}))
    return 0


def _demo_annotation(trace, rng: np.random.Generator, rate: float) -> dict[str, Any]:
    T = trace.num_steps
    if T < 2 or rng.random() >= rate:
        return {"example_id": trace.meta.example_id, "verdict": "true", "problematic_spans": []}
    width = int(rng.integers(1, min(5, T) + 1))
    lr = trace_lookback(trace).mean(axis=1)
    means = np.convolve(lr, np.ones(width) / width, mode="valid")
    start = int(np.argmin(means))
    text = " ".join(trace.token_texts[start : start + width])
    return {"example_id": trace.meta.example_id, "verdict": "false", "problematic_spans": [text]}


def cmd_extract(ns: argparse.Namespace) -> int:
    traces = read_traces(ns.traces)
    by_id = {t.meta.example_id: t for t in traces}
    records = read_annotation_records(ns.annotations)
    rows: list[FeatureRow] = []
    unresolved = 0
    skipped = 0
    for rec in records:
        trace = by_id.get(rec["example_id"])
        if trace is None:
            log.warning("annotation %r has no trace; skipped", rec["example_id"])
            skipped += 1
            continue
        problems = validate_trace(trace, check_mass=not ns.no_mass_check)
        if problems:
            raise TraceFormatError(
                f"trace {trace.meta.example_id!r} is invalid: {problems[0]}"
                + (f" (+{len(problems) - 1} more)" if len(problems) > 1 else "")
            )
        ann = ingest_annotation(rec, trace)
        if ann.verdict == HALLUCINATED:
            unresolved += len(ann.unresolved)
        if not ann.usable or trace.num_steps == 0:
            skipped += 1
            continue
        if ns.mode == "predefined":
            spans = predefined_spans(ann, trace.num_steps)
        else:
            spans = sliding_window_spans(ann, trace.num_steps, ns.window_size)
        for fv in extract_features(trace, spans):
            rows.append(FeatureRow(fv, trace.meta.num_layers, trace.meta.num_heads))
    if unresolved:
        log.warning("%d annotated spans could not be located and were excluded", unresolved)
    if not rows:
        raise CommandError("no usable feature rows (check annotations against traces)")
    write_feature_rows(ns.out, rows)
    summary = {"rows": len(rows), **_label_counts([r.features.label for r in rows])}
    summary.update(unresolved_spans=unresolved, skipped_examples=skipped)
    print(json.dumps(summary))
    return 0


def cmd_train(ns: argparse.Namespace) -> int:
    fvs, layout = _rows_and_layout(read_feature_rows(ns.features))
    fvs, layout = _apply_selection(ns, fvs, layout)
    clf = clf_mod.train(fvs, _train_config(ns), layout)
    clf_mod.save_classifier(ns.out, clf)
    X, y = clf_mod.rows_to_arrays(fvs)
    train_auc = clf_mod.auroc(clf_mod.predict_many(clf, X), y)
    print(json.dumps({"rows": len(fvs), "features": layout.dim, "train_auroc": train_auc,
                      "converged": clf.train_config["converged"]}))
    return 0


def _eval_auc(clf, fvs: Sequence[SpanFeatureVector]) -> float:
    X, y = clf_mod.rows_to_arrays(fvs)
    return clf_mod.auroc(clf_mod.predict_many(clf, X), y)


def cmd_eval(ns: argparse.Namespace) -> int:
    fvs, layout = _rows_and_layout(read_feature_rows(ns.features))
    labels = [f.label for f in fvs]
    counts = _label_counts(labels)
    if 0 in counts.values():
        raise DegenerateLabelsError(
            f"evaluation needs both labels, got {counts['factual']} factual / "
            f"{counts['hallucinated']} hallucinated"
        )
    if ns.classifier:
        clf = clf_mod.load_classifier(ns.classifier)
        if (clf.layout.num_layers, clf.layout.num_heads) != (layout.num_layers, layout.num_heads):
            raise clf_mod.LayoutError("classifier and feature file use different head layouts")
        report = {"mode": "held_out", "rows": len(fvs), "auroc": _eval_auc(clf, fvs)}
    else:
        fvs, layout = _apply_selection(ns, fvs, layout)
        ids = [f.example_id or str(i) for i, f in enumerate(fvs)]
        fold_a, fold_b = two_fold_split(ids, ns.seed)
        folds = [
            [f for f, i in zip(fvs, ids) if i in fold_a],
            [f for f, i in zip(fvs, ids) if i in fold_b],
        ]
        aucs = []
        cfg = _train_config(ns)
        for k in (0, 1):
            model = clf_mod.train(folds[k], cfg, layout)
            aucs.append(_eval_auc(model, folds[1 - k]))
        report = {"mode": "two_fold", "rows": len(fvs), "fold_auroc": aucs,
                  "auroc": float(np.mean(aucs))}
    report.update(counts)
    _emit(report, ns.out)
    return 0


def _load_prompts(ns: argparse.Namespace) -> list[tuple[str, list[int]]]:
    if ns.prompt:
        return [("prompt", [int(t) for t in ns.prompt.split()])]
    if not ns.prompts:
        raise CommandError("decode needs --prompt or --prompts")
    out = []
    for rec in read_annotation_records(ns.prompts):
        out.append((rec["example_id"], [int(t) for t in rec["prompt"]]))
        if ns.limit and len(out) >= ns.limit:
            break
    return out


class ScriptedScorer:
    """Stub detector returning scripted scores: round r, candidate j -> scores[r % R][j % K]."""

    def __init__(self, scores: Sequence[Sequence[float]], num_candidates: int):
        self.scores = [list(map(float, row)) for row in scores]
        self.k = num_candidates
        self.calls = 0

    def __call__(self, _features: SpanFeatureVector) -> float:
        r, j = divmod(self.calls, self.k)
        self.calls += 1
        row = self.scores[r % len(self.scores)]
        return row[j % len(row)]


def cmd_decode(ns: argparse.Namespace) -> int:
    model = ToyTransformer(load_model_config(ns.model))
    prompts = _load_prompts(ns)
    sampler = SamplerConfig("nucleus", ns.temperature, ns.top_p, ns.seed)
    cfg = DecodeConfig(ns.chunk_size, ns.num_candidates, ns.max_new_tokens, sampler, ns.eos)
    clf = None
    if not ns.greedy and not ns.plain:
        if ns.scripted_scores:
            scripted = json.loads(Path(ns.scripted_scores).read_text(encoding="utf-8"))
        elif ns.classifier:
            clf = clf_mod.load_classifier(ns.classifier)
            check_layout(clf, model)
        else:
            raise CommandError("guided decode needs --classifier or --scripted-scores")
    responses, audit = [], []
    for ex_id, prompt in prompts:
        if ns.greedy:
            tokens = generate(model, prompt, SamplerConfig("greedy"), ns.max_new_tokens, ns.eos).tokens
        elif ns.plain:
            tokens = chunked_sample(model, prompt, cfg)
        else:
            scorer = clf if clf is not None else ScriptedScorer(scripted, cfg.num_candidates)
            res = guided_decode(model, scorer, prompt, cfg, threads=ns.threads)
            tokens = res.tokens
            for rnd in res.rounds:
                audit.append({"example_id": ex_id, **rnd.to_record()})
        responses.append({"example_id": ex_id, "tokens": tokens,
                          "text": " ".join(token_text(t) for t in tokens)})
    write_annotation_records(ns.out, responses)
    if ns.audit_log:
        write_annotation_records(ns.audit_log, audit)
    print(json.dumps({"responses": len(responses), "rounds": len(audit)}))
    return 0


def cmd_map_heads(ns: argparse.Namespace) -> int:
    source = head_matrix(read_traces(ns.source_traces))
    target = head_matrix(read_traces(ns.target_traces))
    hmap = fit_head_map(source, target, ns.ridge, fit_intercept=not ns.no_intercept)
    save_head_map(ns.out, hmap)
    print(json.dumps({"source_heads": hmap.source_heads, "target_heads": hmap.target_heads,
                      "min_r2": float(hmap.fit_r2.min()), "mean_r2": float(hmap.fit_r2.mean())}))
    return 0


HEATMAP_HEADER = ("step", "head_rank", "layer", "head", "lookback_ratio", "coefficient_sign")


def cmd_export_heatmap(ns: argparse.Namespace) -> int:
    traces = read_traces(ns.traces)
    if not traces:
        raise CommandError("trace file is empty")
    if ns.example_id:
        match = [t for t in traces if t.meta.example_id == ns.example_id]
        if not match:
            raise CommandError(f"no trace with example id {ns.example_id!r}")
        trace = match[0]
    else:
        trace = traces[0]
    clf = clf_mod.load_classifier(ns.classifier)
    check_layout_vs_trace(clf, trace)
    modes = ["most_positive", "most_negative"] if ns.mode == "signed" else [ns.mode]
    weight_of = dict(zip(clf.layout.active_indices, clf.weights))
    lr = trace_lookback(trace)
    with open(ns.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HEATMAP_HEADER)
        for mode in modes:
            sel = clf_mod.select_heads(clf, ns.k, mode)
            for rank, idx in enumerate(sel.indices, start=1):
                layer, head = clf.layout.head_of(idx)
                sign = int(np.sign(weight_of[idx]))
                for t in range(lr.shape[0]):
                    writer.writerow((t + 1, rank, layer, head, repr(float(lr[t, idx])), sign))
    print(json.dumps({"example_id": trace.meta.example_id, "steps": lr.shape[0]}))
    return 0


def check_layout_vs_trace(clf, trace) -> None:
    m = trace.meta
    if (clf.layout.num_layers, clf.layout.num_heads) != (m.num_layers, m.num_heads):
        raise clf_mod.LayoutError(
            f"classifier layout {clf.layout.num_layers}x{clf.layout.num_heads} does not match "
            f"trace {m.num_layers}x{m.num_heads}"
        )


# ---------------------------------------------------------------------------
# parser


def _add_train_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--l2", type=float, default=TrainConfig.l2_lambda, help="L2 strength on w")
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--tol", type=float, default=1e-8, help="gradient-norm tolerance")
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--layers", help="restrict to 1-based inclusive layer range, e.g. 1-16")
    p.add_argument("--top-k", type=int, help="restrict to top-k heads of --select-from")
    p.add_argument("--select-from", help="classifier whose coefficients rank the heads")
    p.add_argument("--head-mode", default="largest_magnitude", choices=clf_mod.SELECTION_MODES)


def _add_sampler_opts(p: argparse.ArgumentParser, max_new: int = 256) -> None:
    p.add_argument("--max-new-tokens", type=int, default=max_new)
    p.add_argument("--temperature", type=float, default=0.9)
    p.add_argument("--top-p", type=float, default=0.95)
    p.add_argument("--eos", type=int, default=0, help="EOS token id")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="lookback", description=__doc__.split("\n")[0])
    parser.add_argument("--config", help="JSON file of option defaults")
    parser.add_argument("--threads", type=int, default=1, help="worker cap")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command")
    subs: dict[str, argparse.ArgumentParser] = {}

    p = subs["gen-traces"] = sub.add_parser("gen-traces", help="generate a toy demo corpus")
    p.add_argument("--out-dir")
    p.add_argument("--model", help="existing model config file")
    p.add_argument("--num-examples", type=int, default=40)
    p.add_argument("--prompt-len", type=int, default=24)
    p.add_argument("--vocab-size", type=int, default=64)
    p.add_argument("--d-model", type=int, default=32)
    p.add_argument("--num-layers", type=int, default=2)
    p.add_argument("--num-heads", type=int, default=4)
    p.add_argument("--model-seed", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--hallucination-rate", type=float, default=0.5)
    p.add_argument("--retain-full-attention", action="store_true",
                   help="also write full attention rows for oracle checks")
    _add_sampler_opts(p, max_new=32)
    p.set_defaults(func=cmd_gen_traces)

    p = subs["extract"] = sub.add_parser("extract", help="traces + annotations -> feature rows")
    p.add_argument("--traces")
    p.add_argument("--annotations")
    p.add_argument("--mode", choices=("predefined", "window"), default="predefined")
    p.add_argument("--window-size", type=int, default=8)
    p.add_argument("--no-mass-check", action="store_true",
                   help="skip the attention-mass invariant for traces from other runners")
    p.add_argument("--out")
    p.set_defaults(func=cmd_extract)

    p = subs["train"] = sub.add_parser("train", help="fit the logistic detector")
    p.add_argument("--features")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)
    _add_train_opts(p)
    p.set_defaults(func=cmd_train)

    p = subs["eval"] = sub.add_parser("eval", help="AUROC on held-out rows or two-fold")
    p.add_argument("--features")
    p.add_argument("--classifier", help="held-out evaluation of this classifier")
    p.add_argument("--two-fold", action="store_true", help="two-fold validation (default without --classifier)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    _add_train_opts(p)
    p.set_defaults(func=cmd_eval)

    p = subs["decode"] = sub.add_parser("decode", help="classifier-guided chunk decoding")
    p.add_argument("--model")
    p.add_argument("--classifier")
    p.add_argument("--prompts", help="JSONL of {example_id, prompt}")
    p.add_argument("--prompt", help="space-separated prompt token ids")
    p.add_argument("--limit", type=int)
    p.add_argument("--chunk-size", type=int, default=8)
    p.add_argument("--num-candidates", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--greedy", action="store_true", help="plain greedy baseline")
    p.add_argument("--plain", action="store_true", help="unguided chunked sampling baseline")
    p.add_argument("--scripted-scores", help="JSON list of per-round score lists (stub detector)")
    p.add_argument("--out")
    p.add_argument("--audit-log")
    _add_sampler_opts(p)
    p.set_defaults(func=cmd_decode)

    p = subs["map-heads"] = sub.add_parser("map-heads", help="fit target->source head map")
    p.add_argument("--source-traces")
    p.add_argument("--target-traces")
    p.add_argument("--ridge", type=float, default=0.0)
    p.add_argument("--no-intercept", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_map_heads)

    p = subs["export-heatmap"] = sub.add_parser("export-heatmap", help="per-step LR of top heads")
    p.add_argument("--traces")
    p.add_argument("--classifier")
    p.add_argument("--example-id")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--mode", default="largest_magnitude",
                   choices=clf_mod.SELECTION_MODES + ("signed",))
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_heatmap)
    return parser, subs


REQUIRED = {
    "gen-traces": ("out_dir",),
    "extract": ("traces", "annotations", "out"),
    "train": ("features", "out"),
    "eval": ("features",),
    "decode": ("model", "out"),
    "map-heads": ("source_traces", "target_traces", "out"),
    "export-heatmap": ("traces", "classifier", "out"),
}


def _error_record(exc: BaseException) -> str:
    return json.dumps({"error": type(exc).__name__, "message": str(exc)})


def main(argv: Sequence[str] | None = None) -> int:
    parser, subs = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    ns = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if ns.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if ns.config:
            try:
                cfg = json.loads(Path(ns.config).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise CommandError(f"cannot read config {ns.config}: {exc}") from exc
            if not isinstance(cfg, dict):
                raise CommandError("config file must hold a JSON object")
            sub = subs[ns.command]
            valid = {a.dest for a in sub._actions}
            unknown = sorted(set(cfg) - valid)
            if unknown:
                raise CommandError(f"unknown config keys for {ns.command}: {unknown}")
            sub.set_defaults(**cfg)
            ns = parser.parse_args(argv)
        missing = [k for k in REQUIRED[ns.command] if getattr(ns, k) in (None, "")]
        if missing:
            flags = ", ".join("--" + k.replace("_", "-") for k in missing)
            raise CommandError(f"{ns.command}: missing required option(s) {flags}")
        RunConfig.from_namespace(ns)
        return ns.func(ns)
    except (LookbackError, ValueError) as exc:
        print(_error_record(exc), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
