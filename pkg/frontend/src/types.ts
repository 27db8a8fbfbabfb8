/** Shared view and wire types for the labeling UI. */

export type Label = "POSITIVE" | "NEGATIVE" | "NONE";

export type MouseButton = "LEFT" | "RIGHT" | "MIDDLE";

export type ModeTab = "FEATURES" | "SEARCH" | "ACTIVE" | "CORRECTION" | "REVIEW";

/** One cell of the grid. Rendered state is always the last acknowledged
 * server state plus local unsubmitted edits. */
export interface GridItemView {
  object_id: string;
  title: string;
  image_ref?: string;
  probability: number | null;
  label: Label;
}

/** Candidate page as served by GET /projects/{p}/candidates. */
export interface CandidateItemWire {
  object_id: string;
  probability: number | null;
  label: "POSITIVE" | "NEGATIVE" | null;
  title: string;
  image_refs: string[];
  source_url: string | null;
}

export interface CandidatePageWire {
  mode: string;
  page_token: string;
  items: CandidateItemWire[];
  pool_stats: Record<string, number>;
}

export interface TrainReportWire {
  iterations: number;
  pool_positive_rate: number | null;
  labeled_counts: { positive: number; negative: number };
  model_version: number;
  model_stale: boolean;
  retrained: boolean;
}

export interface ProjectStatsWire {
  labeled_pos: number;
  labeled_neg: number;
  unlabeled: number;
  events: number;
  model_version: number;
  model_stale: boolean;
  pool_positive_rate: number | null;
  feature_version: number;
}

export interface LabelEventBody {
  object_id: string;
  value: "POSITIVE" | "NEGATIVE" | "CLEAR";
  mode: string;
}

export interface SessionStats {
  labeledPos: number;
  labeledNeg: number;
  positiveRate: number | null;
  modelVersion: number;
  modelStale: boolean;
}
