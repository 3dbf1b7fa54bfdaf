import { readFileSync } from "node:fs";
import { join } from "node:path";

import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";

function fixtureText(name: string): string {
  return readFileSync(join(__dirname, "fixtures", name), "utf-8");
}

function fakeFetch(routes: Record<string, { status: number; body: string }>) {
  const seen: { url: string; init?: RequestInit }[] = [];
  const fetchFn = async (url: string, init?: RequestInit): Promise<Response> => {
    seen.push({ url, init });
    const key = Object.keys(routes).find((k) => url.endsWith(k));
    if (!key) {
      throw new Error(`no route for ${url}`);
    }
    const { status, body } = routes[key];
    return new Response(body, { status, headers: { "Content-Type": "application/json" } });
  };
  return { fetchFn, seen };
}

describe("ApiClient", () => {
  it("returns API payloads unchanged", async () => {
    const body = fixtureText("strategies.json");
    const { fetchFn } = fakeFetch({ "/strategies": { status: 200, body } });
    const client = new ApiClient("http://server", fetchFn);
    const data = await client.strategies("p1");
    expect(data).toEqual(JSON.parse(body));
  });

  it("posts validation labels as the documented shape", async () => {
    const { fetchFn, seen } = fakeFetch({
      "/validation-labels": {
        status: 200,
        body: JSON.stringify({ v: 1, positive: 1, negative: 1, total: 2 }),
      },
    });
    const client = new ApiClient("http://server", fetchFn);
    const labels = [
      { image_id: "a", label: "positive" as const },
      { image_id: "b", label: "negative" as const },
    ];
    const counts = await client.submitValidationLabels("p1", labels);
    expect(counts.total).toBe(2);
    expect(JSON.parse(String(seen[0].init?.body))).toEqual({ labels });
  });

  it("maps error bodies to typed errors", async () => {
    const { fetchFn } = fakeFetch({
      "/strategy-selection": {
        status: 409,
        body: JSON.stringify({
          v: 1,
          error: { code: "invalid-state", message: "label validation first" },
        }),
      },
    });
    const client = new ApiClient("http://server", fetchFn);
    const failure = await client.runStrategySelection("p1").catch((e) => e);
    expect(failure).toBeInstanceOf(ApiError);
    expect(failure.code).toBe("invalid-state");
    expect(failure.status).toBe(409);
  });
});
