import { readFileSync } from "node:fs";
import { join } from "node:path";

import { describe, expect, it } from "vitest";

import { conceptView, rationaleCards, roundRows, strategyRows } from "../src/render.js";
import type {
  AnnotationPage,
  ProjectSummary,
  RoundsResponse,
  StrategyTable,
} from "../src/types.js";

function fixture<T>(name: string): T {
  return JSON.parse(readFileSync(join(__dirname, "fixtures", name), "utf-8")) as T;
}

describe("strategy dashboard", () => {
  const data = fixture<StrategyTable>("strategies.json");

  it("renders the recorded fixture verbatim", () => {
    expect(strategyRows(data)).toMatchSnapshot();
  });

  it("every displayed value traces to an API field", () => {
    const rows = strategyRows(data);
    expect(rows).toHaveLength(Object.keys(data.table).length);
    for (const row of rows) {
      expect(Number(row.f1)).toBeCloseTo(data.table[String(row.strategy)], 4);
      expect(row.selected).toBe(data.chosen === row.strategy);
    }
    expect(rows.filter((r) => r.selected)).toHaveLength(1);
  });
});

describe("active-learning console", () => {
  const data = fixture<RoundsResponse>("rounds.json");

  it("renders the recorded round history verbatim", () => {
    expect(roundRows(data.items)).toMatchSnapshot();
  });

  it("metrics columns come straight from the API payload", () => {
    const rows = roundRows(data.items);
    expect(rows).toHaveLength(data.items.length);
    rows.forEach((row, i) => {
      const source = data.items[i];
      expect(row.round).toBe(source.round_index);
      expect(row.sampler).toBe(source.sampler);
      expect(row.n).toBe(source.sampled_ids.length);
      expect(Number(row.f1)).toBeCloseTo(source.metrics.f1, 4);
      expect(Number(row.aupr)).toBeCloseTo(source.metrics.aupr ?? NaN, 4);
      expect(row.modelRef).toBe(source.model_ref);
    });
  });
});

describe("rationale review", () => {
  const data = fixture<AnnotationPage>("annotations.json");

  it("renders the recorded annotation cards verbatim", () => {
    expect(rationaleCards(data.items)).toMatchSnapshot();
  });

  it("cards preserve decision, reasons and exchanges", () => {
    const cards = rationaleCards(data.items);
    cards.forEach((card, i) => {
      const source = data.items[i];
      expect(card.imageId).toBe(source.image_id);
      if (source.kind === "annotation") {
        expect(card.decision).toBe(source.decision);
        expect(card.reasons).toEqual(source.reasons);
        expect(card.exchanges).toEqual(source.exchanges);
      }
    });
  });
});

describe("concept editor", () => {
  const summary = fixture<ProjectSummary>("summary.json");

  it("shows the extracted attributes and carve-outs", () => {
    const concept = summary.concept;
    expect(concept).not.toBeNull();
    const view = conceptView(concept!);
    expect(view).toMatchSnapshot();
    expect(view.attributes).toEqual(concept!.positive_attributes.map((a) => a.text));
    expect(view.carveOuts).toEqual(concept!.carve_outs.map((a) => a.text));
  });
});
