"""Top-k accuracy over a labeled manifest, per-image probability comparison,
and epsilon-sweep studies with load accounting."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import imageio
from .inference import MODE_LITERAL, MODE_OFF, PruneConfig, forward, softmax_forward
from .model import NetworkModel
from .pruning import LoadRecorder, savings_ratio
from .tensor import Tensor


@dataclass
class ManifestEntry:
    path: str
    label: int


@dataclass
class DatasetManifest:
    """Labeled image list: entries of (path, ground-truth class index)."""

    entries: list[ManifestEntry]
    class_names: list[str] | None = None

    def __post_init__(self):
        seen = set()
        for entry in self.entries:
            if entry.path in seen:
                raise ValueError(f"duplicate image path in manifest: {entry.path}")
            seen.add(entry.path)
            if entry.label < 0:
                raise ValueError(f"negative class index for {entry.path}")
            if self.class_names is not None and entry.label >= len(self.class_names):
                raise ValueError(
                    f"class index {entry.label} for {entry.path} exceeds "
                    f"{len(self.class_names)} known classes"
                )

    def name_of(self, label: int) -> str:
        if self.class_names is not None and label < len(self.class_names):
            return self.class_names[label]
        return f"class_{label}"


def load_class_names(path) -> list[str]:
    names = [line.strip() for line in Path(path).read_text().splitlines()]
    return [n for n in names if n]


def load_manifest(path, class_names: list[str] | None = None) -> DatasetManifest:
    """Parse the manifest format: one `path<TAB>class_index` per line."""
    entries = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if "\t" not in line:
            raise ValueError(f"{path} line {lineno}: expected path<TAB>class_index")
        img_path, label = line.split("\t", 1)
        try:
            entries.append(ManifestEntry(img_path.strip(), int(label)))
        except ValueError:
            raise ValueError(f"{path} line {lineno}: class index is not an integer") from None
    return DatasetManifest(entries=entries, class_names=class_names)


def classify(model: NetworkModel, image: Tensor, cfg: PruneConfig | None = None,
             capability=None, recorder: LoadRecorder | None = None) -> list[tuple[int, float]]:
    """Ranked (class index, softmax score) list, highest score first.

    Ties break deterministically toward the lower class index. A trailing
    softmax is applied when the model does not end in one.
    """
    out = forward(model, image, cfg=cfg, recorder=recorder, capability=capability)
    if not model.layers or model.layers[-1].kind != "softmax":
        out = softmax_forward(out)
    scores = out.data.ravel()
    order = sorted(range(scores.size), key=lambda i: (-scores[i], i))
    return [(i, float(scores[i])) for i in order]


@dataclass
class EvalResult:
    accuracies: dict[int, float]
    images_evaluated: int
    skipped: list[tuple[str, str]] = field(default_factory=list)

    def to_json(self, path=None) -> str:
        payload = {
            "accuracies": {str(k): v for k, v in self.accuracies.items()},
            "images_evaluated": self.images_evaluated,
            "skipped": [{"path": p, "reason": r} for p, r in self.skipped],
        }
        text = json.dumps(payload, indent=2)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["k", "accuracy"])
            for k in sorted(self.accuracies):
                writer.writerow([k, f"{self.accuracies[k]:.6f}"])


def evaluate(model: NetworkModel, manifest: DatasetManifest, cfg: PruneConfig | None = None,
             ks=(1, 5), capability=None, recorder: LoadRecorder | None = None) -> EvalResult:
    """Top-k accuracy for each k: the fraction of evaluated images whose
    ground truth appears among the first k ranked classes.

    Unreadable images are skipped and reported, never silently dropped.
    """
    if not manifest.entries:
        raise ValueError("manifest is empty")
    correct = {k: 0 for k in ks}
    evaluated = 0
    skipped: list[tuple[str, str]] = []
    for entry in manifest.entries:
        try:
            image = imageio.load_input(entry.path, model.input_shape)
        except (OSError, ValueError) as exc:
            skipped.append((entry.path, str(exc)))
            continue
        ranked = [idx for idx, _ in classify(model, image, cfg=cfg,
                                             capability=capability, recorder=recorder)]
        for k in ks:
            if entry.label in ranked[:k]:
                correct[k] += 1
        evaluated += 1
    if evaluated == 0:
        raise ValueError("no image in the manifest could be evaluated")
    return EvalResult(
        accuracies={k: correct[k] / evaluated for k in ks},
        images_evaluated=evaluated,
        skipped=skipped,
    )


@dataclass
class SweepRow:
    epsilon: float
    top1: float
    top5: float
    top1_loss: float
    top5_loss: float
    load_reduction: float
    per_layer_megabits: list[dict]


@dataclass
class SweepResult:
    """Accuracy and load reduction per epsilon, against an unpruned baseline.

    Losses follow the positive-means-worse sign convention
    (baseline accuracy minus pruned accuracy).
    """

    baseline_top1: float
    baseline_top5: float
    rows: list[SweepRow]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["epsilon", "top1", "top5", "top1_loss", "top5_loss",
                             "load_reduction"])
            for row in self.rows:
                writer.writerow([f"{row.epsilon:g}", f"{row.top1:.6f}", f"{row.top5:.6f}",
                                 f"{row.top1_loss:.6f}", f"{row.top5_loss:.6f}",
                                 f"{row.load_reduction:.6f}"])

    def to_json(self, path=None) -> str:
        text = json.dumps(asdict(self), indent=2)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def epsilon_sweep(model: NetworkModel, manifest: DatasetManifest, epsilons,
                  leak: float = 0.01, mode: str = MODE_LITERAL,
                  capability=None, ks=(1, 5)) -> SweepResult:
    """Evaluate at each epsilon with load recording; report deltas versus
    the unpruned baseline and the per-layer bandwidth series."""
    eps_list = [float(e) for e in epsilons]
    if not eps_list:
        raise ValueError("epsilon list must not be empty")
    if eps_list != sorted(eps_list):
        raise ValueError("epsilon list must be sorted ascending")
    baseline = evaluate(model, manifest, PruneConfig(), ks=ks, capability=capability)
    base1 = baseline.accuracies[ks[0]]
    base5 = baseline.accuracies[ks[1]] if len(ks) > 1 else base1
    rows = []
    for eps in eps_list:
        recorder = LoadRecorder()
        cfg = PruneConfig(epsilon=eps, leak=leak, mode=mode)
        result = evaluate(model, manifest, cfg, ks=ks, capability=capability,
                          recorder=recorder)
        savings = savings_ratio(recorder)
        rows.append(SweepRow(
            epsilon=eps,
            top1=result.accuracies[ks[0]],
            top5=result.accuracies[ks[1]] if len(ks) > 1 else result.accuracies[ks[0]],
            top1_loss=base1 - result.accuracies[ks[0]],
            top5_loss=(base5 - result.accuracies[ks[1]]) if len(ks) > 1 else 0.0,
            load_reduction=savings.saved_fraction,
            per_layer_megabits=[{
                "layer_index": l.layer_index,
                "megabits_loaded": l.megabits_loaded,
                "megabits_total": l.megabits_total,
            } for l in savings.per_layer],
        ))
    return SweepResult(baseline_top1=base1, baseline_top5=base5, rows=rows)


@dataclass
class CompareRow:
    path: str
    label: int
    prob_unpruned: float
    prob_pruned: float
    channels_total: int
    channels_skipped: int


def compare_per_image(model: NetworkModel, manifest: DatasetManifest, cfg: PruneConfig,
                      capability=None) -> list[CompareRow]:
    """Ground-truth class probability with and without pruning, per image,
    plus the per-image saved-load counts."""
    if cfg.mode == MODE_OFF:
        raise ValueError("compare_per_image needs a pruning mode, not 'off'")
    rows = []
    for entry in manifest.entries:
        image = imageio.load_input(entry.path, model.input_shape)
        plain = dict(classify(model, image, PruneConfig()))
        recorder = LoadRecorder()
        pruned = dict(classify(model, image, cfg, capability=capability, recorder=recorder))
        rows.append(CompareRow(
            path=entry.path,
            label=entry.label,
            prob_unpruned=plain[entry.label],
            prob_pruned=pruned[entry.label],
            channels_total=sum(r.channels_total for r in recorder.rows),
            channels_skipped=sum(r.channels_skipped for r in recorder.rows),
        ))
    return rows


def write_compare_csv(rows: list[CompareRow], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["path", "label", "prob_unpruned", "prob_pruned",
                         "channels_total", "channels_skipped"])
        for row in rows:
            writer.writerow([row.path, row.label, f"{row.prob_unpruned:.6f}",
                             f"{row.prob_pruned:.6f}", row.channels_total,
                             row.channels_skipped])
