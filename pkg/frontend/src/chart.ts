// Stream chart model. The plotted points are exactly the server-side
// aggregation rows (no client resampling, ever); annotations overlay as
// markers from their own stream's raw points in the same range.

import { ApiClient } from "./http.js";

export interface ChartQuery {
  studyId: string;
  stream: string;
  participant?: string;
  from: string;
  to: string;
  bin: string;
  fn: "mean" | "min" | "max" | "count" | "sum" | "last";
  field?: string;
  annotationStream?: string;
}

export interface AggRow {
  bin: string;
  value: number;
}

export interface Marker {
  timestamp: string;
  participant: string;
  values: Record<string, unknown>;
}

export interface ChartModel {
  query: ChartQuery;
  points: AggRow[];
  markers: Marker[];
}

export async function loadStreamChart(api: ApiClient,
                                      query: ChartQuery): Promise<ChartModel> {
  const rows = await api.request<{ rows: AggRow[] }>(
    "GET", `/studies/${query.studyId}/streams/${query.stream}/points`, {
      query: {
        participant: query.participant,
        from: query.from,
        to: query.to,
        bin: query.bin,
        fn: query.fn,
        field: query.field,
      },
    });
  let markers: Marker[] = [];
  if (query.annotationStream) {
    const raw = await api.request<{ rows: Marker[] }>(
      "GET", `/studies/${query.studyId}/streams/${query.annotationStream}/points`, {
        query: { from: query.from, to: query.to },
      });
    markers = raw.rows;
  }
  return { query, points: rows.rows, markers };
}
