"""
Chamfer evaluation of reconstructions over one split of a manifest.

Every shape is reconstructed from its normalized mesh and compared against two references
when available: `scans` (that mesh) and `registrations` (the optional registration mesh of the
manifest, given in the raw frame and mapped with the scan's normalization). Scores are
reported multiplied by 1e3, then summarized by their 5th, 50th and 95th percentiles.
"""
import concurrent.futures
import csv
import dataclasses
import logging
import math
import pathlib
import sys
import traceback
import typing

import numpy as np
from django.db import models

from salforge import seeding
from salforge.geometry.chamfer import REPORT_SCALE, chamfer
from salforge.geometry.mesh import Normalization, TriangleSoup, load_mesh
from salforge.geometry.sampling import sample_surface
from salforge.reconstruct.inference import Reconstructor, normalized_scan
from salforge.sdfield.manifest import Manifest, ManifestEntry, Split
from salforge.training.checkpoint import Checkpoint

PERCENTILES = (5, 50, 95)
REPORT_HEADER = ('split', 'shape', 'chamfer_x1e3')
SUMMARY_HEADER = ('split', 'reference', 'percentile', 'chamfer_x1e3')


class Reference(models.TextChoices):
    SCANS = 'scans'
    REGISTRATIONS = 'registrations'


class EvaluationError(RuntimeError):

    def __init__(self, message, shape_id=None):
        self.shape_id = shape_id
        super().__init__(message)


@dataclasses.dataclass
class ShapeScore:
    split: str
    shape_id: str
    reference: str
    chamfer: float


@dataclasses.dataclass
class ReportRow:
    split: str
    reference: str
    percentile: int
    value: float


@dataclasses.dataclass
class EvaluationReport:
    scores: typing.List[ShapeScore]
    rows: typing.List[ReportRow]

    def row(self, reference: str, percentile: int) -> ReportRow:
        return next(r for r in self.rows if r.reference == reference and r.percentile == percentile)

    def scores_for(self, reference: str) -> typing.List[ShapeScore]:
        return [s for s in self.scores if s.reference == reference]


def percentile(values, p: float) -> float:
    """Linear interpolation between the closest order statistics; infinite values are allowed."""
    ordered = np.sort(np.asarray(values, dtype=np.float64))
    if not len(ordered):
        raise EvaluationError('percentile of an empty set')
    position = (len(ordered) - 1) * p / 100.0
    lower, upper = math.floor(position), math.ceil(position)
    a, b = ordered[lower], ordered[upper]
    if lower == upper or a == b:
        return float(a)
    return float(a + (b - a) * (position - lower))


def summarize(scores: typing.List[ShapeScore], split: str) -> typing.List[ReportRow]:
    rows = []
    for reference in Reference.values:
        values = [s.chamfer for s in scores if s.reference == reference]
        if values:
            rows.extend(ReportRow(split, reference, p, percentile(values, p)) for p in PERCENTILES)
    return rows


def surface_chamfer(reconstruction: TriangleSoup, reference: TriangleSoup, samples: int,
                    rng: np.random.Generator) -> float:
    """Chamfer x1e3 between `samples` surface points of each mesh; +inf for an empty reconstruction."""
    if not len(reconstruction) or not reconstruction.areas().sum() > 0:
        return math.inf
    a = sample_surface(reconstruction, samples, rng)
    b = sample_surface(reference, samples, rng)
    return chamfer(a, b) * REPORT_SCALE


def _registration(entry: ManifestEntry, transform: Normalization) -> typing.Optional[TriangleSoup]:
    if entry.registration is None:
        return None
    soup = load_mesh(entry.registration)
    return TriangleSoup(transform.apply(soup.vertices), soup.triangles, soup.comments)


def evaluate_shape(reconstructor: Reconstructor, entry: ManifestEntry) -> typing.List[ShapeScore]:
    settings = reconstructor.config.reconstruct
    seed = reconstructor.seed
    try:
        scan, transform = normalized_scan(load_mesh(entry.mesh))
        result = reconstructor.reconstruct_normalized(scan, transform, entry.shape_id)
        references = [(Reference.SCANS, scan)]
        registration = _registration(entry, transform)
        if registration is not None:
            references.append((Reference.REGISTRATIONS, registration))
    except Exception as e:
        logging.error(f'EVAL ERROR: {entry.shape_id} failed: {e}')
        logging.error('\n'.join(traceback.format_exception(*sys.exc_info())))
        raise EvaluationError(f'shape {entry.shape_id}: {e}', shape_id=entry.shape_id)

    if not len(result.soup):
        logging.warning(f'EVAL: {entry.shape_id} has an empty reconstruction, chamfer is inf')
    scores = []
    for reference, soup in references:
        rng = seeding.stream(seed, seeding.EVAL, entry.shape_id, reference)
        value = surface_chamfer(result.soup, soup, settings.chamfer_samples, rng)
        scores.append(ShapeScore(entry.split, entry.shape_id, reference, value))
        logging.info(f'EVAL: {entry.shape_id} vs {reference}: chamfer x1e3 {value:.6g}')
    return scores


def evaluate(checkpoint: Checkpoint, manifest: Manifest, split: str = Split.TEST,
             resolution: typing.Optional[int] = None, workers: int = 1) -> EvaluationReport:
    entries = manifest.split(split)
    if not entries:
        raise EvaluationError(f'split {split!r} of the manifest is empty')

    # shapes run in parallel, so each grid is evaluated on one thread
    reconstructor = Reconstructor(checkpoint, resolution, workers=1)
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        per_shape = list(pool.map(lambda entry: evaluate_shape(reconstructor, entry), entries))
    scores = [score for shape_scores in per_shape for score in shape_scores]
    rows = summarize(scores, split)
    for row in rows:
        logging.info(f'EVAL: {split} {row.reference} p{row.percentile} = {row.value:.6g}')
    return EvaluationReport(scores, rows)


def _number(value: float) -> str:
    return 'inf' if math.isinf(value) else f'{value:.6f}'


def write_report(report: EvaluationReport, path):
    """Per-shape block for each reference, then the percentile summary."""
    path = pathlib.Path(path)
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        for index, reference in enumerate(r for r in Reference.values if report.scores_for(r)):
            if index:
                f.write(f'\n# {reference}\n')
            writer.writerow(REPORT_HEADER)
            for score in report.scores_for(reference):
                writer.writerow([score.split, score.shape_id, _number(score.chamfer)])
        f.write('\n# summary\n')
        writer.writerow(SUMMARY_HEADER)
        for row in report.rows:
            writer.writerow([row.split, row.reference, row.percentile, _number(row.value)])
    return path
