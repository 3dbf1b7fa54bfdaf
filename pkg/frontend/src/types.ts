// Payload shapes of the /v1 wire API. Every displayed number traces back to
// one of these fields.

export type Label = "positive" | "negative";

export interface ProjectSummary {
  v: number;
  project_id: string;
  name: string;
  seed: number;
  concept: ConceptInfo | null;
  corpus: CorpusManifest | null;
  candidates: number;
  labels: number;
  validation: { labeled: number; total: number };
  chosen_strategy: number | null;
  active_model_ref: string | null;
  rounds: number;
}

export interface ConceptInfo {
  id: string;
  name: string;
  description: string;
  positive_attributes: AttributeInfo[];
  carve_outs: AttributeInfo[];
}

export interface AttributeInfo {
  id: string;
  text: string;
  polarity: "in_scope" | "out_of_scope";
  atomic: boolean;
}

export interface CorpusManifest {
  name: string;
  dim: number;
  record_count: number;
  source_path: string;
  checksum: string;
}

export interface ValidationQueue {
  v: number;
  items: ValidationItem[];
  progress: { labeled: number; total: number };
}

export interface ValidationItem {
  image_id: string;
  uri: string;
  label: Label | null;
}

export interface LabelCounts {
  v: number;
  positive: number;
  negative: number;
  total: number;
}

export interface StrategyTable {
  v: number;
  chosen: number | null;
  table: Record<string, number>;
}

export interface AnnotationPage {
  v: number;
  items: AnnotationRecord[];
  page: number;
  page_size: number;
  total: number;
}

export interface AnnotationRecord {
  v: number;
  kind: "annotation" | "error";
  image_id: string;
  decision?: Label;
  reasons?: string[];
  exchanges?: { q: string; a: string }[];
  caption?: string | null;
  config_used?: number;
  stage?: string;
  code?: string;
  message?: string;
}

export interface MetricsInfo {
  precision: number;
  recall: number;
  f1: number;
  aupr: number | null;
  threshold: number | null;
  support_positive: number;
  support_negative: number;
  degenerate: boolean;
}

export interface RoundInfo {
  round_index: number;
  sampler: string;
  sampled_ids: string[];
  new_positive: number;
  new_negative: number;
  model_ref: string;
  metrics: MetricsInfo;
}

export interface RoundsResponse {
  v: number;
  items: RoundInfo[];
}

export interface ApiErrorBody {
  v: number;
  error: { code: string; message: string };
}
