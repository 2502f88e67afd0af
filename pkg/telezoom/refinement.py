# -*- coding: utf-8 -*-
"""
🧩 Target Refinement
Find coarse-grained collisions and train colliding windows against their whole target class
"""

import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from sklearn.neighbors import NearestNeighbors

from telezoom.config import RunConfig
from telezoom.constraints import ConstraintSet
from telezoom.errors import CheckpointError, DataError
from telezoom.kal import fit
from telezoom.model import Imputer, l_combine_min
from telezoom.series import CoarseBundle, FineSeries, WindowDataset

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class EquivalenceClass:
    """Windows whose coarse inputs are indistinguishable but whose targets differ"""

    member_ids: Tuple[int, ...]
    representative_input: CoarseBundle
    targets: Tuple[FineSeries, ...]

    def __post_init__(self):
        if len(self.targets) < 2:
            raise DataError(f"An equivalence class needs >= 2 targets, got {len(self.targets)}")


def _components(n: int, pairs: np.ndarray) -> List[List[int]]:
    """Connected components of size >= 2, each sorted, ordered by smallest member"""
    if not len(pairs):
        return []
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    groups: Dict[int, List[int]] = {}
    for i, label in enumerate(labels):
        groups.setdefault(int(label), []).append(i)
    return sorted((g for g in groups.values() if len(g) > 1), key=lambda g: g[0])


def equivalence_test(
    dataset: WindowDataset,
    basic_model: Imputer,
    theta_far: float = 0.5,
    theta_close: float = 0.1,
) -> List[EquivalenceClass]:
    """
    Group windows i, j when their basic-model outputs are close and their targets far:
    rmse(out_i, out_j) < theta_close * sigma and rmse(target_i, target_j) > theta_far * sigma,
    sigma being the training target std. Classes are the transitive closure of that relation.
    """
    if not basic_model.trained:
        raise CheckpointError("Equivalence test needs a trained basic model")
    if theta_far <= 0 or theta_close <= 0:
        raise ValueError("theta_far and theta_close must be positive")
    examples = sorted(dataset.examples, key=lambda ex: ex.example_id)
    if len(examples) < 2:
        return []

    outputs = basic_model.predict([ex.input for ex in examples])
    targets = np.stack([ex.target.values for ex in examples])
    sigma = basic_model.target_scale
    width = targets.shape[1]

    # rmse < r  <=>  euclidean < r * sqrt(W)
    radius = theta_close * sigma * np.sqrt(width)
    neighbors = NearestNeighbors(radius=radius).fit(outputs)
    distances, indices = neighbors.radius_neighbors(outputs, return_distance=True, sort_results=True)

    pairs = []
    for i, (dist_row, idx_row) in enumerate(zip(distances, indices)):
        for d, j in zip(dist_row, idx_row):
            if j <= i or d >= radius:
                continue
            if np.sqrt(np.mean((targets[i] - targets[j]) ** 2)) > theta_far * sigma:
                pairs.append((i, j))
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)

    classes = [
        EquivalenceClass(
            member_ids=tuple(examples[i].example_id for i in group),
            representative_input=examples[group[0]].input,
            targets=tuple(examples[i].target for i in group),
        )
        for group in _components(len(examples), pairs)
    ]
    members = sum(len(c.member_ids) for c in classes)
    logger.info(
        f"✅ Equivalence test: {len(pairs)} colliding pairs, {len(classes)} classes, "
        f"{members}/{len(examples)} windows ({100.0 * members / len(examples):.1f}%)"
    )
    return classes


def l_class(out: torch.Tensor, cls: EquivalenceClass, emd_weight: float = 1.0) -> torch.Tensor:
    """min over the class targets of l_combine(out, target); gradient only through the argmin"""
    if not cls.targets:
        raise DataError("Empty equivalence class")
    single = out.dim() == 1
    out = out.unsqueeze(0) if single else out
    candidates = torch.as_tensor(np.stack([t.values for t in cls.targets]), dtype=out.dtype, device=out.device)
    loss = l_combine_min(out, candidates.unsqueeze(0).expand(out.shape[0], -1, -1), emd_weight)
    return loss[0] if single else loss


def merge_classes(classes: Sequence[EquivalenceClass], dataset: WindowDataset) -> List[EquivalenceClass]:
    """Union classes that share a member"""
    by_id = {ex.example_id: ex for ex in dataset.examples}
    ids = sorted({i for c in classes for i in c.member_ids})
    if not ids:
        return []
    position = {i: k for k, i in enumerate(ids)}
    pairs = [(position[c.member_ids[0]], position[m]) for c in classes for m in c.member_ids[1:]]
    groups = _components(len(ids), np.asarray(pairs, dtype=np.int64).reshape(-1, 2))
    return [
        EquivalenceClass(
            member_ids=tuple(ids[k] for k in group),
            representative_input=by_id[ids[group[0]]].input,
            targets=tuple(by_id[ids[k]].target for k in group),
        )
        for group in groups
    ]


def classes_from_groups(dataset: WindowDataset, groups: Sequence[Sequence[int]]) -> List[EquivalenceClass]:
    """Rebuild classes from stored member-id groups (a classes.json sidecar)"""
    by_id = {ex.example_id: ex for ex in dataset.examples}
    classes = []
    for group in groups:
        ids = sorted(int(i) for i in group)
        unknown = [i for i in ids if i not in by_id]
        if unknown:
            raise DataError(f"Class members {unknown} are not in the dataset")
        if len(ids) < 2:
            raise DataError(f"Stored class {ids} has fewer than 2 members")
        classes.append(EquivalenceClass(
            member_ids=tuple(ids),
            representative_input=by_id[ids[0]].input,
            targets=tuple(by_id[i].target for i in ids),
        ))
    logger.info(f"✅ Loaded {len(classes)} stored classes")
    return classes


def refine_dataset(dataset: WindowDataset, classes: Sequence[EquivalenceClass]) -> WindowDataset:
    """Give every class member its class's full target set; inputs and size are unchanged"""
    if not classes:
        return dataset
    merged = merge_classes(classes, dataset)
    target_sets = {i: c.targets for c in merged for i in c.member_ids}
    refined = [
        replace(ex, class_targets=target_sets[ex.example_id]) if ex.example_id in target_sets else ex
        for ex in dataset.examples
    ]
    logger.info(f"✅ Refined {len(target_sets)} windows into {len(merged)} classes")
    return dataset.with_examples(refined)


def train_basic_model(train: WindowDataset, cfg: RunConfig, val: Optional[WindowDataset] = None) -> Imputer:
    """L_combine-only model on the raw dataset, same ModelConfig and budget as the final model"""
    model = Imputer.build(train, cfg.model)
    fit(train, ConstraintSet(), model, cfg, val=val, mode="basic")
    return model
