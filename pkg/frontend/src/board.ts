// Participant status board: one row per participant with per-stream coverage
// and last-seen, straight from the daily-summary endpoint. A row is flagged
// when the participant produced nothing at all that day. The notify helper
// wires the board's follow-up button to the manual-notification endpoint.

import { ApiClient } from "./http.js";

export interface StreamStatus {
  count: number;
  coverage: number;
  last_seen: string | null;
}

export interface BoardRow {
  participant: string;
  group: string;
  perStream: Record<string, StreamStatus>;
  flagged: boolean;
}

export interface StatusBoard {
  studyId: string;
  date: string;
  streams: string[];
  rows: BoardRow[];
}

export async function loadStatusBoard(api: ApiClient, studyId: string,
                                      date: string): Promise<StatusBoard> {
  const participants = await api.request<{ participants: { participant_id: string; group_id: string }[] }>(
    "GET", `/studies/${studyId}/participants`);
  const streams = await api.request<{ streams: { stream_name: string }[] }>(
    "GET", `/studies/${studyId}/streams`);
  const rows: BoardRow[] = [];
  for (const p of participants.participants) {
    const summary = await api.request<{ per_stream: Record<string, StreamStatus> }>(
      "GET", `/participants/${p.participant_id}/summary`, { query: { date } });
    const flagged = Object.values(summary.per_stream)
      .every((cell) => cell.count === 0);
    rows.push({
      participant: p.participant_id,
      group: p.group_id,
      perStream: summary.per_stream,
      flagged,
    });
  }
  return {
    studyId,
    date,
    streams: streams.streams.map((s) => s.stream_name),
    rows,
  };
}

export async function sendManualNotification(
  api: ApiClient, studyId: string, participants: string[],
  title: string, body: string,
): Promise<{ participant: string; status: string }[]> {
  const doc = await api.request<{ outcomes: { participant: string; status: string }[] }>(
    "POST", `/studies/${studyId}/notifications`,
    { body: { participants, title, body } });
  return doc.outcomes;
}
