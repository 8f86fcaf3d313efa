// Rule editor support: document validation feedback and dry-run execution.
//
// The dry run calls the server's /rules/{id}/test endpoint with a synthetic
// context and keeps the response verbatim as the trace (bindings, branch
// decisions, would-be actions); rendering derives display lines from it but
// never computes its own numbers. Validation failures surface as inline
// problems anchored at the failing document path.

import { ApiClient, ApiError } from "./http.js";

export interface SyntheticContext {
  participant?: string;
  now?: string;
  point?: { stream?: string; timestamp?: string; values?: Record<string, unknown> };
  streams?: Record<string, { timestamp: string; values: Record<string, unknown> }[]>;
  profile?: Record<string, unknown>;
  group_profile?: Record<string, unknown>;
}

export interface TraceAction {
  action: string;
  spec: Record<string, unknown>;
  outcome: Record<string, unknown>;
}

export interface DryRunTrace {
  status: string;
  bindings: Record<string, Record<string, unknown>[]>;
  branch_decisions: boolean[];
  actions: TraceAction[];
  error?: string;
}

export interface ValidationProblem {
  path: string;
  message: string;
}

export type DryRunResult =
  | { ok: true; trace: DryRunTrace }
  | { ok: false; problems: ValidationProblem[] };

export async function dryRun(api: ApiClient, studyId: string, ruleId: string,
                             ruleDoc: unknown,
                             context: SyntheticContext): Promise<DryRunResult> {
  try {
    const trace = await api.request<DryRunTrace>(
      "POST", `/studies/${studyId}/rules/${ruleId}/test`,
      { body: { rule_doc: ruleDoc, context } });
    return { ok: true, trace };
  } catch (error) {
    if (error instanceof ApiError && error.code === "validation-failed") {
      const details = error.details as { errors?: ValidationProblem[] };
      return { ok: false, problems: details?.errors ?? [] };
    }
    throw error;
  }
}

/** Human-readable lines for the trace panel, derived 1:1 from the trace. */
export function traceLines(trace: DryRunTrace): string[] {
  const lines: string[] = [];
  for (const [name, rows] of Object.entries(trace.bindings)) {
    lines.push(`${name}: ${rows.length} row(s)`);
  }
  trace.branch_decisions.forEach((decision, index) => {
    lines.push(`branch[${index}]: ${decision ? "then" : "else"}`);
  });
  for (const action of trace.actions) {
    lines.push(`action ${action.action}: ${JSON.stringify(action.outcome)}`);
  }
  if (trace.actions.length === 0) {
    lines.push("no actions would run");
  }
  return lines;
}
