// Thin HTTP client over the generated route table.

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
    public details?: unknown,
  ) {
    super(message);
  }
}

export interface RequestOptions {
  query?: Record<string, string | undefined>;
  body?: unknown;
  raw?: Uint8Array;
}

export class ApiClient {
  token: string | null = null;

  constructor(public baseUrl: string) {}

  async request<T = any>(method: string, path: string,
                         options: RequestOptions = {}): Promise<T> {
    const url = new URL(this.baseUrl + path);
    for (const [key, value] of Object.entries(options.query ?? {})) {
      if (value !== undefined) url.searchParams.set(key, value);
    }
    const headers: Record<string, string> = {};
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    let body: BodyInit | undefined;
    if (options.raw !== undefined) {
      headers["Content-Type"] = "application/octet-stream";
      body = new Blob([options.raw.slice().buffer]);
    } else if (options.body !== undefined) {
      headers["Content-Type"] = "application/json";
      body = JSON.stringify(options.body);
    }
    const resp = await fetch(url, { method, headers, body });
    const doc = await resp.json().catch(() => ({}));
    if (!resp.ok) {
      throw new ApiError(resp.status, doc.error ?? "unknown",
                         doc.message ?? resp.statusText, doc.details);
    }
    return doc as T;
  }

  async login(credential: string): Promise<LoginResponse> {
    const doc = await this.request<LoginResponse>("POST", "/auth/login", {
      body: { credential },
    });
    this.token = doc.token;
    return doc;
  }
}

export interface LoginResponse {
  token: string;
  principal_id: string;
  kind: string;
  expires_at: string;
  scope: { study_id: string; role: string }[];
}
