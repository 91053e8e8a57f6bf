"""
Modality-space diagnostics.

Pooled sequence representations (masked mean, the same pooling the
discriminator sees) are compared across modalities: centroid distance,
discriminator accuracy at threshold 0.5, and a joint two-dimensional PCA
of both clouds. Training logs are turned into per-step curves of the
discriminator loss against the summed generator losses.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch
from scipy.stats import spearmanr

from .errors import EmptyInputError, ShapeError
from .network import ModalDiscriminator, masked_mean
from .objectives import discriminator_loss
from .synthdata import Triple, make_batches

logger = logging.getLogger(__name__)

CURVE_COLUMNS = ['step', 'disc', 'gen', 'asr', 'mt', 'st', 'acc']
SCATTER_COLUMNS = ['id', 'modality', 'pc1', 'pc2']


@dataclass
class PCAResult:
    points: np.ndarray                # [N, dims]
    variance_explained: np.ndarray    # [dims], eigenvalues of the 1/(N-1) covariance, descending
    components: np.ndarray            # [dims, d]
    mean: np.ndarray                  # [d]


@dataclass
class ModalityReport:
    centroid_distance: float
    discriminator_accuracy: float
    variance_explained: Tuple[float, float]
    scatter: pd.DataFrame = field(repr=False)

    def to_dict(self) -> Dict:
        return {
            'centroid_distance': self.centroid_distance,
            'discriminator_accuracy': self.discriminator_accuracy,
            'variance_explained': list(self.variance_explained),
            'n_points': int(len(self.scatter)),
        }


@torch.no_grad()
def pool_representations(model, dataset: Sequence[Triple], max_frames: int = 4000,
                         dtype: torch.dtype = torch.float32) -> Tuple[List[str], np.ndarray, np.ndarray]:
    """
    Mean-pooled h_st (speech through both encoders) and h_mt (transcription
    through the textual encoder) for every triple, in eval mode.

    Returns:
        (ids, st_pool [N, d], mt_pool [N, d]) in dataset order.
    """
    if not dataset:
        raise EmptyInputError("Cannot pool representations of an empty dataset.")
    model.eval()
    rows: Dict[str, Tuple[np.ndarray, np.ndarray]] = {}
    for batch in make_batches(dataset, max_frames, shuffle_seed=0, dtype=dtype):
        _, h_st, _ = model.encode_speech(batch.frames, batch.frame_mask)
        h_mt = model.encode_text(batch.src, batch.src_mask)
        st_pool = masked_mean(h_st.reps, h_st.mask).double().numpy()
        mt_pool = masked_mean(h_mt.reps, h_mt.mask).double().numpy()
        for i, ex_id in enumerate(batch.ids):
            rows[ex_id] = (st_pool[i], mt_pool[i])
    ids = [t.id for t in dataset]
    return ids, np.stack([rows[i][0] for i in ids]), np.stack([rows[i][1] for i in ids])


def pca_project(reps: np.ndarray, dims: int = 2) -> PCAResult:
    """
    Projects centered data onto its top principal directions.

    Each direction's sign is fixed so that its largest-magnitude loading is
    positive. Directions beyond the rank of the data are zero-filled with a
    warning.
    """
    x = np.asarray(reps, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"pca_project expects an [N, d] matrix, got shape {x.shape}")
    n, d = x.shape
    if n <= dims:
        raise ShapeError(f"PCA to {dims} dims needs more than {dims} points, got {n}")
    if not np.all(np.isfinite(x)):
        raise ValueError("pca_project received non-finite values")

    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals, eigvecs = eigvals[order], eigvecs[:, order]

    tol = 1e-12 * max(1.0, float(eigvals[0]) if len(eigvals) else 1.0)
    rank = int(np.sum(eigvals > tol))
    components = np.zeros((dims, d))
    variance = np.zeros(dims)
    keep = min(dims, rank, d)
    if keep < dims:
        logger.warning(f"Degenerate spectrum: data has rank {rank}, {dims - keep} PCA component(s) zero-filled")
    for k in range(keep):
        vec = eigvecs[:, k]
        if vec[np.argmax(np.abs(vec))] < 0:
            vec = -vec
        components[k] = vec
        variance[k] = eigvals[k]
    return PCAResult(points=centered @ components.T, variance_explained=variance, components=components, mean=mean)


def _classifier(discriminator) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(discriminator, ModalDiscriminator):
        def classify(x: np.ndarray) -> np.ndarray:
            param = next(discriminator.parameters())
            with torch.no_grad():
                return discriminator.classify_pooled(torch.as_tensor(x, dtype=param.dtype)).double().numpy()
        return classify
    return lambda x: np.asarray(discriminator(x), dtype=np.float64)


def modality_report(st_pool: np.ndarray, mt_pool: np.ndarray, discriminator,
                    ids: Optional[Sequence[str]] = None) -> ModalityReport:
    """
    Compares the two modality clouds.

    Args:
        st_pool: Pooled speech representations [N_st, d].
        mt_pool: Pooled text representations [N_mt, d].
        discriminator: A ModalDiscriminator, or any callable mapping [N, d]
            to probabilities of "text".
        ids: Optional example ids shared by both sets, used in the scatter.
    """
    st_pool, mt_pool = np.asarray(st_pool, dtype=np.float64), np.asarray(mt_pool, dtype=np.float64)
    if len(st_pool) == 0 or len(mt_pool) == 0:
        raise EmptyInputError("Both modality sets must be nonempty.")

    centroid_distance = float(np.linalg.norm(st_pool.mean(axis=0) - mt_pool.mean(axis=0)))
    classify = _classifier(discriminator)
    correct = int(np.sum(classify(st_pool) < 0.5)) + int(np.sum(classify(mt_pool) >= 0.5))
    accuracy = correct / (len(st_pool) + len(mt_pool))

    pca = pca_project(np.concatenate([st_pool, mt_pool]), dims=2)
    st_ids = list(ids) if ids is not None else [str(i) for i in range(len(st_pool))]
    mt_ids = list(ids) if ids is not None else [str(i) for i in range(len(mt_pool))]
    scatter = pd.DataFrame({
        'id': st_ids + mt_ids,
        'modality': ['speech'] * len(st_pool) + ['text'] * len(mt_pool),
        'pc1': pca.points[:, 0],
        'pc2': pca.points[:, 1],
    }, columns=SCATTER_COLUMNS)
    return ModalityReport(centroid_distance=centroid_distance, discriminator_accuracy=accuracy,
                          variance_explained=(float(pca.variance_explained[0]), float(pca.variance_explained[1])),
                          scatter=scatter)


def fit_probe(st_pool: np.ndarray, mt_pool: np.ndarray, hidden: int = 64, layers: int = 3,
              steps: int = 300, lr: float = 1e-2, seed: int = 0) -> ModalDiscriminator:
    """
    Trains a fresh modality discriminator on frozen pooled representations.

    Gives every run a comparably trained classifier, including runs whose own
    discriminator never received updates.
    """
    st = torch.as_tensor(np.asarray(st_pool), dtype=torch.float64)
    mt = torch.as_tensor(np.asarray(mt_pool), dtype=torch.float64)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        probe = ModalDiscriminator(st.shape[1], hidden, layers).double()
    optimizer = torch.optim.Adam(probe.parameters(), lr=lr)
    for _ in range(steps):
        optimizer.zero_grad()
        loss = discriminator_loss(probe.classify_pooled(st), probe.classify_pooled(mt))
        loss.backward()
        optimizer.step()
    probe.eval()
    return probe


def diagnose_model(model, fit_dataset: Sequence[Triple], eval_dataset: Sequence[Triple], cfg,
                   dtype: torch.dtype = torch.float32) -> Tuple[ModalityReport, float]:
    """
    Held-out modality report for a trained model.

    A probe discriminator is fitted on `fit_dataset` pools with the encoders
    frozen and scored on `eval_dataset`. The model's own discriminator is
    scored on the same pools and returned alongside.

    Returns:
        (report with the probe's accuracy, accuracy of the model's discriminator)
    """
    _, fit_st, fit_mt = pool_representations(model, fit_dataset, cfg.train.max_frames, dtype)
    ids, st_pool, mt_pool = pool_representations(model, eval_dataset, cfg.train.max_frames, dtype)
    probe = fit_probe(fit_st, fit_mt, hidden=cfg.model.disc_hidden, layers=cfg.model.disc_layers,
                      steps=cfg.diagnostics.probe_steps, lr=cfg.diagnostics.probe_lr, seed=cfg.train.seed)
    report = modality_report(st_pool, mt_pool, probe, ids=ids)
    own = modality_report(st_pool, mt_pool, model.discriminator, ids=ids).discriminator_accuracy
    logger.info(f"Centroid distance {report.centroid_distance:.4f}, probe accuracy "
                f"{report.discriminator_accuracy:.3f}, model discriminator accuracy {own:.3f}")
    return report, own


def curves_frame(log) -> pd.DataFrame:
    """Per-step fine-tuning curves; `gen` is gen_st + gen_mt."""
    records = [r for r in log if r.get('phase', 'finetune') == 'finetune']
    if not records:
        raise EmptyInputError("Training log has no fine-tuning records.")
    frame = pd.DataFrame(records)
    frame['gen'] = frame['gen_st'] + frame['gen_mt']
    return frame[CURVE_COLUMNS].reset_index(drop=True)


def export_curves(log, out_path: Union[str, Path], plot: bool = False) -> pd.DataFrame:
    """Writes the curves CSV (`step,disc,gen,asr,mt,st,acc`) and optionally a PNG next to it."""
    frame = curves_frame(log)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out_path, index=False)
    logger.info(f"Wrote {len(frame)} curve rows to {out_path}")
    if plot:
        plot_curves(frame, out_path.with_suffix('.png'))
    return frame


def export_scatter(report: ModalityReport, out_path: Union[str, Path], plot: bool = False) -> Path:
    """Writes the scatter CSV (`id,modality,pc1,pc2`) and optionally a PNG next to it."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    report.scatter.to_csv(out_path, index=False)
    if plot:
        plot_scatter(report, out_path.with_suffix('.png'))
    return out_path


def loss_reversal(frame: pd.DataFrame) -> float:
    """Spearman correlation between the discriminator and generator loss series."""
    if len(frame) < 3:
        return float('nan')
    rho, _ = spearmanr(frame['disc'], frame['gen'])
    return float(rho)


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_curves(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 3.6), constrained_layout=True)
    ax.plot(frame['step'], frame['disc'], label='Discriminator')
    ax.plot(frame['step'], frame['gen'], label='Generators')
    ax.set_xlabel('step')
    ax.set_ylabel('loss')
    ax.legend()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def plot_scatter(report: ModalityReport, path: Union[str, Path]) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(4.5, 4.5), constrained_layout=True)
    for modality, group in report.scatter.groupby('modality'):
        ax.scatter(group['pc1'], group['pc2'], s=8, alpha=0.7, label=modality)
    ve = report.variance_explained
    ax.set_xlabel(f"PC1 ({ve[0]:.3g})")
    ax.set_ylabel(f"PC2 ({ve[1]:.3g})")
    ax.legend()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)
