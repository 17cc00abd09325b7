"""Corner-case taxonomy: required-data columns crossed with originating stages.

Ten stages (rows) and four data classes (columns) give 31 admissible
cells. Rows 6 and 9 are merged across all four columns and row 10 spans
only the two environment columns, so each merged row is a single cell
carrying a set of columns.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Sequence


class ColumnClass(str, enum.Enum):
    EgoTrajectory = "ego_trajectory"
    EgoOthers = "ego_others"
    EgoEnvironment = "ego_environment"
    EgoOthersEnvironment = "ego_others_environment"


class RowStage(str, enum.Enum):
    Perception = "perception"
    DecisionMaking = "decision_making"
    GoalRiskTolerance = "goal_risk_tolerance"
    Execution = "execution"
    Body = "body"
    CompAttentionalResources = "comp_attentional_resources"
    Knowledge = "knowledge"
    Environment = "environment"
    TrajectoryRecording = "trajectory_recording"
    StaticEnvironmentInfo = "static_environment_info"

    @property
    def number(self) -> int:
        return list(RowStage).index(self) + 1


class Mode(str, enum.Enum):
    analysis = "analysis"
    dataset = "dataset"


ALL_COLUMNS = frozenset(ColumnClass)
ENV_COLUMNS = frozenset({ColumnClass.EgoEnvironment, ColumnClass.EgoOthersEnvironment})

# kinds whose evidence is an explicit, persisting rule violation; only these
# keep Knowledge when labelling black-box dataset trajectories
RULE_IGNORANCE_KINDS = frozenset({"u_turn", "wrong_way"})


class TaxonomyError(ValueError):
    pass


class InvalidCell(TaxonomyError):
    def __init__(self, stage: RowStage, column: ColumnClass):
        super().__init__(f"({stage.value}, {column.value}) is not a taxonomy cell")
        self.stage = stage
        self.column = column


class EmptyStageSet(TaxonomyError):
    pass


class InconsistentDeclaration(TaxonomyError):
    pass


@dataclass(frozen=True)
class TaxonomyCell:
    row: RowStage
    columns: frozenset

    def __contains__(self, column: ColumnClass) -> bool:
        return column in self.columns


def _build_matrix() -> frozenset[TaxonomyCell]:
    cells = []
    for stage in RowStage:
        if stage in (RowStage.CompAttentionalResources, RowStage.TrajectoryRecording):
            cells.append(TaxonomyCell(stage, ALL_COLUMNS))
        elif stage is RowStage.StaticEnvironmentInfo:
            cells.append(TaxonomyCell(stage, ENV_COLUMNS))
        else:
            cells.extend(TaxonomyCell(stage, frozenset({col})) for col in ColumnClass)
    return frozenset(cells)


_MATRIX = _build_matrix()


def validity_matrix() -> frozenset[TaxonomyCell]:
    return _MATRIX


def cell_for(stage: RowStage, column: ColumnClass) -> TaxonomyCell:
    for cell in _MATRIX:
        if cell.row is stage and column in cell.columns:
            return cell
    raise InvalidCell(stage, column)


def is_valid(stage: RowStage, column: ColumnClass) -> bool:
    try:
        cell_for(stage, column)
    except InvalidCell:
        return False
    return True


def column_from_evidence(has_others: bool, uses_map: bool) -> ColumnClass:
    if has_others and uses_map:
        return ColumnClass.EgoOthersEnvironment
    if has_others:
        return ColumnClass.EgoOthers
    if uses_map:
        return ColumnClass.EgoEnvironment
    return ColumnClass.EgoTrajectory


def required_data_class(detection) -> ColumnClass:
    """Column implied by the detection's own evidence.

    Raises:
        InconsistentDeclaration: if the detector declared a different column.
    """
    column = column_from_evidence(bool(detection.other_ids), bool(detection.uses_map))
    declared = getattr(detection, "required_data", None)
    if declared is not None and ColumnClass(declared) is not column:
        raise InconsistentDeclaration(
            f"{detection.kind}: declared {ColumnClass(declared).value}, evidence implies {column.value}"
        )
    return column


@dataclass(frozen=True)
class CornerCaseLabel:
    detection: object
    column: ColumnClass
    stages: frozenset
    mode: Mode

    @property
    def cells(self) -> frozenset[TaxonomyCell]:
        return frozenset(cell_for(stage, self.column) for stage in self.stages)


def filter_stages(kind: str, stages: Iterable[RowStage], mode: Mode | str) -> frozenset:
    mode = Mode(mode)
    stages = frozenset(RowStage(s) for s in stages)
    if mode is Mode.analysis:
        return stages
    kept = stages - {RowStage.CompAttentionalResources}
    if kind not in RULE_IGNORANCE_KINDS:
        kept = kept - {RowStage.Knowledge}
    return kept


def label(detection, mode: Mode | str = Mode.dataset) -> CornerCaseLabel:
    """Assign the taxonomy column and candidate stages to a detection.

    In dataset mode, resource-allocation stages are dropped (the stages
    where they manifest are already among the candidates), and Knowledge
    survives only for explicit rule-ignorance kinds.

    Raises:
        InvalidCell: a (stage, column) pair outside the validity matrix.
        EmptyStageSet: no stage left after mode filtering.
    """
    mode = Mode(mode)
    column = required_data_class(detection)
    stages = filter_stages(detection.kind, detection.candidate_stages, mode)
    if not stages:
        raise EmptyStageSet(f"{detection.kind}: no admissible stage in {mode.value} mode")
    for stage in sorted(stages, key=lambda s: s.number):
        cell_for(stage, column)
    return CornerCaseLabel(detection, column, stages, mode)


@dataclass(frozen=True)
class Situation:
    ego_id: str
    t_start: float
    t_end: float
    labels: tuple


def situation_merge(labels: Sequence[CornerCaseLabel]) -> list[Situation]:
    """Group labels whose intervals overlap on the same ego."""
    by_ego: dict[str, list[CornerCaseLabel]] = {}
    for lab in labels:
        by_ego.setdefault(lab.detection.ego_id, []).append(lab)
    situations = []
    for ego in sorted(by_ego):
        group: list[CornerCaseLabel] = []
        end = -float("inf")
        ordered = sorted(by_ego[ego], key=lambda l: (l.detection.t_start, l.detection.t_end, l.detection.kind))
        for lab in ordered:
            if group and lab.detection.t_start > end:
                situations.append(_situation(ego, group))
                group = []
                end = -float("inf")
            group.append(lab)
            end = max(end, lab.detection.t_end)
        if group:
            situations.append(_situation(ego, group))
    return situations


def _situation(ego: str, group: list[CornerCaseLabel]) -> Situation:
    return Situation(
        ego_id=ego,
        t_start=min(l.detection.t_start for l in group),
        t_end=max(l.detection.t_end for l in group),
        labels=tuple(group),
    )
