// Chart parity: the chart data model equals the server's aggregation rows
// for five fixture queries, and annotation markers come from their stream.

import assert from "node:assert/strict";
import { after, before, describe, it } from "node:test";

import { ChartQuery, loadStreamChart } from "../src/chart.js";
import { renderChart } from "../src/render.js";
import { Fixture, TestServer, ingestPoints, seedStudy, setClock, startServer } from "./helpers.js";

describe("stream charts", () => {
  let server: TestServer;
  let fixture: Fixture;

  before(async () => {
    server = await startServer();
    fixture = await seedStudy(server.url);
    await setClock(fixture, "2026-01-05T00:00:00Z");
    const points = [];
    for (let hour = 0; hour < 24; hour++) {
      points.push({ timestamp: `2026-01-04T${String(hour).padStart(2, "0")}:05:00Z`,
                    bpm: 60 + hour });
      points.push({ timestamp: `2026-01-04T${String(hour).padStart(2, "0")}:35:00Z`,
                    bpm: 70 + hour });
    }
    await ingestPoints(server.url, fixture, points);
    await fixture.admin.request("POST", `/studies/${fixture.studyId}/annotations`, {
      body: { participant: fixture.participant, stream_suffix: "events",
              timestamp: "2026-01-04T12:30:00Z", values: { event: "fall" } },
    });
  });

  after(async () => {
    await server.stop();
  });

  const QUERIES: Partial<ChartQuery>[] = [
    { bin: "1h", fn: "mean" },
    { bin: "1h", fn: "count" },
    { bin: "2h", fn: "max" },
    { bin: "6h", fn: "sum" },
    { bin: "1d", fn: "last" },
  ];

  it("model points equal query_stream agg rows for 5 fixture queries", async () => {
    for (const partial of QUERIES) {
      const query: ChartQuery = {
        studyId: fixture.studyId, stream: "heart_rate",
        participant: fixture.participant,
        from: "2026-01-04T00:00:00Z", to: "2026-01-05T00:00:00Z",
        bin: partial.bin!, fn: partial.fn!,
      };
      const model = await loadStreamChart(fixture.admin, query);
      const api = await fixture.admin.request<{ rows: unknown[] }>(
        "GET", `/studies/${fixture.studyId}/streams/heart_rate/points`, {
          query: { participant: fixture.participant, from: query.from,
                   to: query.to, bin: query.bin, fn: query.fn },
        });
      assert.deepEqual(model.points, api.rows, `${query.fn} per ${query.bin}`);
    }
  });

  it("mean per hour over 24h yields 24 bars matching the API", async () => {
    const model = await loadStreamChart(fixture.admin, {
      studyId: fixture.studyId, stream: "heart_rate",
      participant: fixture.participant,
      from: "2026-01-04T00:00:00Z", to: "2026-01-05T00:00:00Z",
      bin: "1h", fn: "mean",
    });
    assert.equal(model.points.length, 24);
    const html = renderChart(model);
    assert.ok(html.includes('data-points="24"'));
  });

  it("annotation markers appear at their timestamps", async () => {
    const model = await loadStreamChart(fixture.admin, {
      studyId: fixture.studyId, stream: "heart_rate",
      participant: fixture.participant,
      from: "2026-01-04T00:00:00Z", to: "2026-01-05T00:00:00Z",
      bin: "1h", fn: "mean", annotationStream: "annotation.events",
    });
    assert.equal(model.markers.length, 1);
    assert.equal(model.markers[0].values.event, "fall");
    const html = renderChart(model);
    assert.ok(html.includes("2026-01-04T12:30:00"));
  });

  it("empty range renders the empty-state panel", async () => {
    const model = await loadStreamChart(fixture.admin, {
      studyId: fixture.studyId, stream: "heart_rate",
      participant: fixture.participant,
      from: "2025-06-01T00:00:00Z", to: "2025-06-02T00:00:00Z",
      bin: "1h", fn: "mean",
    });
    assert.equal(model.points.length, 0);
    assert.match(renderChart(model), /empty/);
  });

  it("invalid range surfaces the server error verbatim", async () => {
    await assert.rejects(
      loadStreamChart(fixture.admin, {
        studyId: fixture.studyId, stream: "heart_rate",
        from: "2026-01-05T00:00:00Z", to: "2026-01-04T00:00:00Z",
        bin: "1h", fn: "mean",
      }),
      (error: any) => error.code === "invalid-range",
    );
  });
});
