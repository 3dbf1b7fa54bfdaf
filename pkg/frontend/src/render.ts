// Pure view-model builders: API payloads in, display rows out. The DOM layer
// just prints these, so tests can pin them to recorded fixtures exactly.

import type {
  AnnotationRecord,
  ConceptInfo,
  RoundInfo,
  StrategyTable,
} from "./types.js";

export interface StrategyRow {
  strategy: number;
  f1: string;
  selected: boolean;
}

export function strategyRows(data: StrategyTable): StrategyRow[] {
  return Object.keys(data.table)
    .map(Number)
    .sort((a, b) => a - b)
    .map((index) => ({
      strategy: index,
      f1: data.table[String(index)].toFixed(4),
      selected: data.chosen === index,
    }));
}

export interface RoundRow {
  round: number;
  sampler: string;
  n: number;
  newLabels: string;
  precision: string;
  recall: string;
  f1: string;
  aupr: string;
  modelRef: string;
}

export function roundRows(items: RoundInfo[]): RoundRow[] {
  return items.map((round) => ({
    round: round.round_index,
    sampler: round.sampler,
    n: round.sampled_ids.length,
    newLabels: `${round.new_positive}+/${round.new_negative}-`,
    precision: round.metrics.precision.toFixed(4),
    recall: round.metrics.recall.toFixed(4),
    f1: round.metrics.f1.toFixed(4),
    aupr: round.metrics.aupr === null ? "-" : round.metrics.aupr.toFixed(4),
    modelRef: round.model_ref,
  }));
}

export interface RationaleCard {
  imageId: string;
  kind: "annotation" | "error";
  decision: string;
  reasons: string[];
  exchanges: { q: string; a: string }[];
  caption: string | null;
  strategy: string;
}

export function rationaleCards(items: AnnotationRecord[]): RationaleCard[] {
  return items.map((record) => {
    if (record.kind === "error") {
      return {
        imageId: record.image_id,
        kind: "error",
        decision: `failed at ${record.stage ?? "?"} (${record.code ?? "error"})`,
        reasons: [record.message ?? ""],
        exchanges: [],
        caption: null,
        strategy: "-",
      };
    }
    return {
      imageId: record.image_id,
      kind: "annotation",
      decision: record.decision ?? "?",
      reasons: record.reasons ?? [],
      exchanges: record.exchanges ?? [],
      caption: record.caption ?? null,
      strategy: String(record.config_used ?? "-"),
    };
  });
}

export interface ConceptView {
  name: string;
  description: string;
  attributes: string[];
  carveOuts: string[];
}

export function conceptView(concept: ConceptInfo): ConceptView {
  return {
    name: concept.name,
    description: concept.description,
    attributes: concept.positive_attributes.map((a) => a.text),
    carveOuts: concept.carve_outs.map((a) => a.text),
  };
}
