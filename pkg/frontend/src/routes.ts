// Dashboard navigation registry. Every page names the permission that gates
// it; visibility is a pure projection of the role-permission matrix
// (deny-by-default: no matching permission, no route).

import { PERMISSIONS } from "./generated/api-client.js";

export interface NavRoute {
  id: string;
  title: string;
  hash: string;
  requires: string;
}

export const NAV_ROUTES: readonly NavRoute[] = [
  { id: "studies", title: "Studies", hash: "#/studies", requires: "study.read" },
  { id: "recruitment", title: "Recruitment", hash: "#/recruitment", requires: "recruitment.create" },
  { id: "board", title: "Participant status", hash: "#/board", requires: "summary.read" },
  { id: "charts", title: "Charts", hash: "#/charts", requires: "data.query" },
  { id: "annotations", title: "Annotate", hash: "#/annotations", requires: "annotation.create" },
  { id: "interactions", title: "Interaction editor", hash: "#/interactions", requires: "interaction.edit" },
  { id: "rules", title: "Rule editor", hash: "#/rules", requires: "rule.test" },
  { id: "executions", title: "Executions", hash: "#/executions", requires: "execution.read" },
  { id: "outbox", title: "Outbox", hash: "#/outbox", requires: "outbox.read" },
  { id: "notify", title: "Send notification", hash: "#/notify", requires: "notification.send" },
  { id: "schema", title: "Profile schema", hash: "#/schema", requires: "profile.schema.edit" },
  { id: "admin", title: "Study settings", hash: "#/admin", requires: "study.manage" },
];

// A nav entry gated by a permission the service does not know would be dead
// weight that could never render; fail loudly at load time instead.
for (const route of NAV_ROUTES) {
  if (!PERMISSIONS.has(route.requires)) {
    throw new Error(
      `nav route ${route.id} requires unknown permission ${route.requires}`,
    );
  }
}
