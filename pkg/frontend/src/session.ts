// Login session and the role-derived route set.

import { ApiClient } from "./http.js";
import { MATRIX_VERSION } from "./generated/api-client.js";
import { NAV_ROUTES, NavRoute } from "./routes.js";

export interface MatrixDoc {
  format: number;
  version: number;
  roles: string[];
  permissions: Record<string, Record<string, "allow" | "deny">>;
}

export class UiSession {
  principalId: string | null = null;
  kind: string | null = null;
  scope = new Map<string, string>(); // study id -> role
  activeStudy: string | null = null;
  private matrix: MatrixDoc | null = null;

  constructor(public api: ApiClient) {}

  async login(credential: string): Promise<void> {
    const doc = await this.api.login(credential);
    this.principalId = doc.principal_id;
    this.kind = doc.kind;
    this.scope = new Map(doc.scope.map((g) => [g.study_id, g.role]));
    const studies = [...this.scope.keys()].filter((s) => s !== "*");
    this.activeStudy = studies[0] ?? null;
    await this.loadMatrix();
  }

  async loadMatrix(): Promise<void> {
    const doc = await this.api.request<MatrixDoc>("GET", "/api/matrix");
    if (doc.version !== MATRIX_VERSION) {
      console.warn(
        `matrix version ${doc.version} differs from generated client ` +
        `(${MATRIX_VERSION}); navigation still follows the served matrix`,
      );
    }
    this.matrix = doc;
  }

  roleFor(studyId: string | null): string | null {
    if (studyId && this.scope.has(studyId)) return this.scope.get(studyId)!;
    return this.scope.get("*") ?? null;
  }

  allows(permission: string, studyId: string | null = this.activeStudy): boolean {
    const role = this.roleFor(studyId);
    if (!role || !this.matrix) return false; // deny by default
    return this.matrix.permissions[permission]?.[role] === "allow";
  }

  /** Navigation the current role may see for the active study. */
  visibleRoutes(studyId: string | null = this.activeStudy): NavRoute[] {
    return NAV_ROUTES.filter((route) => this.allows(route.requires, studyId));
  }
}
