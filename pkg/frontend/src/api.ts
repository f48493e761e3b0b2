// REST client for the core backend. All views go through this module; the
// UI keeps no record state of its own.

export class ApiError extends Error {
  constructor(public status: number, public code: string, message: string) {
    super(message);
  }
}

export interface CommentJson {
  author: string;
  created: number;
  text: string;
}

export interface FeedCardJson {
  id: number;
  owner: string;
  title: string;
  created: number;
  study_uid: string;
  tags: string[];
  shared_with: number[];
  comments: CommentJson[];
  bookmarked: boolean;
  node_statuses: string[];
  node_count: number;
}

export interface TreeNodeJson {
  node_id: number | "root";
  kind: "data" | "plugin";
  parent_id: number | "root" | null;
  status: string;
  depth: number;
  title?: string;
  plugin?: string;
  params?: Record<string, unknown>;
  error?: string | null;
  output_files: string[];
}

export interface TreeJson {
  feed: FeedCardJson & Record<string, unknown>;
  nodes: TreeNodeJson[];
}

export interface PluginParamJson {
  name: string;
  type: "text" | "int" | "real" | "flag" | "choice";
  required: boolean;
  default: unknown;
  choices: string[] | null;
}

export interface PluginJson {
  id: number;
  name: string;
  version: string;
  parameters: PluginParamJson[];
}

export interface SeriesRowJson {
  series_uid: string;
  modality: string;
  instance_count: number;
}

export interface StudyRowJson {
  study_uid: string;
  patient_sex: string;
  patient_age: string;
  study_date: string;
  description: string;
  series: SeriesRowJson[];
}

export interface InstanceJson {
  id: number;
  feed_id: number;
  status: string;
  parent_id: number | null;
}

const TOKEN_KEY = "chips_token";
const LOGIN_KEY = "chips_login";

export class Api {
  constructor(
    public base: string = "",
    private storage: Storage = sessionStorage,
  ) {}

  get token(): string | null {
    return this.storage.getItem(TOKEN_KEY);
  }

  get loginName(): string | null {
    return this.storage.getItem(LOGIN_KEY);
  }

  get authenticated(): boolean {
    return this.token !== null;
  }

  logout(): void {
    this.storage.removeItem(TOKEN_KEY);
    this.storage.removeItem(LOGIN_KEY);
  }

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
    query?: Record<string, string>,
  ): Promise<T> {
    let url = this.base + path;
    if (query) {
      url += "?" + new URLSearchParams(query).toString();
    }
    const headers: Record<string, string> = { "Content-Type": "application/json" };
    if (this.token) {
      headers["Authorization"] = `Bearer ${this.token}`;
    }
    const response = await fetch(url, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    let payload: any = {};
    try {
      payload = await response.json();
    } catch {
      // non-JSON error body: fall through with the status alone
    }
    if (!response.ok) {
      throw new ApiError(
        response.status,
        payload.error ?? "HttpError",
        payload.message ?? `${method} ${path} failed (${response.status})`,
      );
    }
    return payload as T;
  }

  async login(login: string, secret: string): Promise<void> {
    const out = await this.request<{ token: string; user: { login: string } }>(
      "POST", "/login", { login, secret },
    );
    this.storage.setItem(TOKEN_KEY, out.token);
    this.storage.setItem(LOGIN_KEY, out.user.login);
  }

  feeds(): Promise<FeedCardJson[]> {
    return this.request<{ feeds: FeedCardJson[] }>("GET", "/feeds").then((r) => r.feeds);
  }

  tree(feedId: number): Promise<TreeJson> {
    return this.request<TreeJson>("GET", `/feeds/${feedId}/tree`);
  }

  plugins(): Promise<PluginJson[]> {
    return this.request<{ plugins: PluginJson[] }>("GET", "/plugins").then((r) => r.plugins);
  }

  annotate(feedId: number, action: "ADD_TAG" | "ADD_COMMENT" | "BOOKMARK", text = ""): Promise<FeedCardJson> {
    return this.request<FeedCardJson>("POST", `/feeds/${feedId}/annotate`, { action, text });
  }

  share(feedId: number, to: string): Promise<FeedCardJson> {
    return this.request<FeedCardJson>("POST", `/feeds/${feedId}/share`, { to });
  }

  createInstance(
    feedId: number,
    pluginId: number,
    parentId: number | "root",
    params: Record<string, unknown>,
  ): Promise<InstanceJson> {
    return this.request<InstanceJson>("POST", `/feeds/${feedId}/instances`, {
      plugin_id: pluginId,
      parent_id: parentId,
      params,
    });
  }

  cancelInstance(instanceId: number): Promise<InstanceJson> {
    return this.request<InstanceJson>("POST", `/instances/${instanceId}/cancel`);
  }

  pacsQuery(filters: Record<string, string>): Promise<StudyRowJson[]> {
    return this.request<{ studies: StudyRowJson[] }>(
      "POST", "/pacs/query", { level: "STUDY", filters },
    ).then((r) => r.studies);
  }

  pacsPull(studyUid: string, title: string): Promise<FeedCardJson> {
    return this.request<FeedCardJson>("POST", "/pacs/pull", { study_uid: studyUid, title });
  }

  queryMetadata(clauses: { key: string; op: string; value: unknown }[]): Promise<unknown[]> {
    return this.request<{ records: unknown[] }>(
      "GET", "/metadata/query", undefined, { q: JSON.stringify(clauses) },
    ).then((r) => r.records);
  }
}
