// Generated from /api/spec. Do not edit by hand;
// run scripts/generate-client.mjs against a server and commit.

export interface RouteDef {
  method: string;
  path: string;
  permission: string | null;
  selfScoped: boolean;
  public: boolean;
  studyFrom: string | null;
}

export const SPEC_FORMAT = 1;
export const MATRIX_VERSION = 1;
export const ROLES: readonly string[] = ["admin","study_manager","recruiter","data_analyst","clinician","participant","service"];

export const ROUTES: readonly RouteDef[] = [
  { method: "GET", path: "/api/matrix", permission: null, selfScoped: false, public: true, studyFrom: null },
  { method: "GET", path: "/api/spec", permission: null, selfScoped: false, public: true, studyFrom: null },
  { method: "POST", path: "/auth/login", permission: null, selfScoped: false, public: true, studyFrom: null },
  { method: "GET", path: "/blobs/{ref}", permission: "blob.read", selfScoped: false, public: false, studyFrom: "query:study" },
  { method: "POST", path: "/blobs", permission: "blob.write", selfScoped: false, public: false, studyFrom: "query:study" },
  { method: "POST", path: "/connectors/{connector_id}/sync", permission: "connector.sync", selfScoped: true, public: false, studyFrom: "connector:connector_id" },
  { method: "POST", path: "/connectors", permission: "connector.link", selfScoped: true, public: false, studyFrom: "participant:participant" },
  { method: "GET", path: "/executions", permission: "execution.read", selfScoped: false, public: false, studyFrom: "query:study" },
  { method: "GET", path: "/health", permission: null, selfScoped: false, public: true, studyFrom: null },
  { method: "POST", path: "/ingest", permission: "data.ingest", selfScoped: true, public: false, studyFrom: "participant:participant" },
  { method: "GET", path: "/participants/{participant_id}/profile/{key}/history", permission: "profile.history.read", selfScoped: false, public: false, studyFrom: "participant:participant_id" },
  { method: "PUT", path: "/participants/{participant_id}/profile/{key}", permission: "profile.write", selfScoped: true, public: false, studyFrom: "participant:participant_id" },
  { method: "GET", path: "/participants/{participant_id}/profile", permission: "profile.read", selfScoped: true, public: false, studyFrom: "participant:participant_id" },
  { method: "PUT", path: "/participants/{participant_id}/settings", permission: "settings.edit", selfScoped: true, public: false, studyFrom: "participant:participant_id" },
  { method: "GET", path: "/participants/{participant_id}/summary", permission: "summary.read", selfScoped: true, public: false, studyFrom: "participant:participant_id" },
  { method: "POST", path: "/participants/me/interactions/{interaction_id}/responses", permission: "interaction.respond", selfScoped: true, public: false, studyFrom: "self" },
  { method: "GET", path: "/participants/me/interactions", permission: "interaction.respond", selfScoped: true, public: false, studyFrom: "self" },
  { method: "POST", path: "/principals", permission: "principal.create", selfScoped: false, public: false, studyFrom: null },
  { method: "PUT", path: "/profiles/group/{study_id}/{group_id}/{key}", permission: "profile.write", selfScoped: false, public: false, studyFrom: "path:study_id" },
  { method: "GET", path: "/profiles/group/{study_id}/{group_id}", permission: "profile.read", selfScoped: false, public: false, studyFrom: "path:study_id" },
  { method: "GET", path: "/profiles/participant/{participant_id}/{key}", permission: "profile.read", selfScoped: true, public: false, studyFrom: "participant:participant_id" },
  { method: "PUT", path: "/profiles/participant/{participant_id}/{key}", permission: "profile.write", selfScoped: true, public: false, studyFrom: "participant:participant_id" },
  { method: "GET", path: "/profiles/participant/{participant_id}", permission: "profile.read", selfScoped: true, public: false, studyFrom: "participant:participant_id" },
  { method: "POST", path: "/sdk/fetch", permission: "sdk.fetch", selfScoped: false, public: false, studyFrom: "body:study_id" },
  { method: "POST", path: "/sdk/invoke", permission: "sdk.invoke", selfScoped: false, public: false, studyFrom: "body:study_id" },
  { method: "POST", path: "/signup/{link_id}", permission: null, selfScoped: false, public: true, studyFrom: null },
  { method: "POST", path: "/studies/{study_id}/annotations", permission: "annotation.create", selfScoped: false, public: false, studyFrom: "path:study_id" },
  { method: "PUT", path: "/studies/{study_id}/groups/{group_id}/profile/{key}", permission: "profile.write", selfScoped: false, public: false, studyFrom: "path:study_id" },
  { method: "POST", path: "/studies/{study_id}/groups/{group_id}/profile/clone-to/{dst_group}", permission: "profile.clone", selfScoped: false, public: false, studyFrom: "path:study_id" },
  { method: "GET", path: "/studies/{study_id}/groups/{group_id}/profile", permission: "profile.read", selfScoped: false, public: false, studyFrom: "path:study_id" },
  { method: "PUT", path: "/studies/{study_id}/interactions/{interaction_id}", permission: "interaction.edit", selfScoped: false, public: false, studyFrom: "path:study_id" },
  { method: "GET", path: "/studies/{study_id}/interactions", permission: "interaction.read", selfScoped: false, public: false, studyFrom: "path:study_id" },
  { method: "POST", path: "/studies/{study_id}/notifications", permission: "notification.send", selfScoped: false, public: false, studyFrom: "path:study_id" },
  { method: "GET", path: "/studies/{study_id}/outbox", permission: "outbox.read", selfScoped: false, public: false, studyFrom: "path:study_id" },
  { method: "GET", path: "/studies/{study_id}/participants", permission: "participant.list", selfScoped: false, public: false, studyFrom: "path:study_id" },
  { method: "POST", path: "/studies/{study_id}/participants", permission: "participant.create", selfScoped: false, public: false, studyFrom: "path:study_id" },
  { method: "GET", path: "/studies/{study_id}/profile-schema", permission: "profile.schema.read", selfScoped: false, public: false, studyFrom: "path:study_id" },
  { method: "PUT", path: "/studies/{study_id}/profile-schema", permission: "profile.schema.edit", selfScoped: false, public: false, studyFrom: "path:study_id" },
  { method: "POST", path: "/studies/{study_id}/recruitment-links", permission: "recruitment.create", selfScoped: false, public: false, studyFrom: "path:study_id" },
  { method: "GET", path: "/studies/{study_id}/responses", permission: "interaction.read", selfScoped: false, public: false, studyFrom: "path:study_id" },
  { method: "POST", path: "/studies/{study_id}/rules/{rule_id}/test", permission: "rule.test", selfScoped: false, public: false, studyFrom: "path:study_id" },
  { method: "PUT", path: "/studies/{study_id}/rules/{rule_id}", permission: "rule.edit", selfScoped: false, public: false, studyFrom: "path:study_id" },
  { method: "GET", path: "/studies/{study_id}/rules", permission: "rule.read", selfScoped: false, public: false, studyFrom: "path:study_id" },
  { method: "POST", path: "/studies/{study_id}/status", permission: "study.manage", selfScoped: false, public: false, studyFrom: "path:study_id" },
  { method: "GET", path: "/studies/{study_id}/streams/{stream}/points", permission: "data.query", selfScoped: true, public: false, studyFrom: "path:study_id" },
  { method: "GET", path: "/studies/{study_id}/streams", permission: "stream.read", selfScoped: false, public: false, studyFrom: "path:study_id" },
  { method: "POST", path: "/studies/{study_id}/streams", permission: "stream.register", selfScoped: false, public: false, studyFrom: "path:study_id" },
  { method: "PUT", path: "/studies/{study_id}/templates", permission: "study.manage", selfScoped: false, public: false, studyFrom: "path:study_id" },
  { method: "GET", path: "/studies/{study_id}", permission: "study.read", selfScoped: false, public: false, studyFrom: "path:study_id" },
  { method: "GET", path: "/studies", permission: null, selfScoped: false, public: false, studyFrom: null },
  { method: "POST", path: "/studies", permission: "study.create", selfScoped: false, public: false, studyFrom: null },
];

export const PERMISSIONS: ReadonlySet<string> = new Set(
  ROUTES.map((r) => r.permission).filter((p): p is string => p !== null)
);
