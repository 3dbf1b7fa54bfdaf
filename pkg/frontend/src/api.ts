import type {
  AnnotationPage,
  ConceptInfo,
  Label,
  LabelCounts,
  ProjectSummary,
  RoundsResponse,
  StrategyTable,
  ValidationQueue,
} from "./types.js";

export class ApiError extends Error {
  constructor(public code: string, message: string, public status: number) {
    super(message);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** Thin typed client for the /v1 wire API; all state lives on the server. */
export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, {
      method,
      headers: body === undefined ? undefined : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const payload = await response.json();
    if (!response.ok) {
      const code = payload?.error?.code ?? "error";
      const message = payload?.error?.message ?? response.statusText;
      throw new ApiError(code, message, response.status);
    }
    return payload as T;
  }

  listProjects(): Promise<{ v: number; projects: string[] }> {
    return this.request("GET", "/v1/projects");
  }

  projectSummary(projectId: string): Promise<ProjectSummary> {
    return this.request("GET", `/v1/projects/${projectId}`);
  }

  describe(projectId: string, text: string | null): Promise<{ v: number; concept: ConceptInfo }> {
    return this.request("POST", `/v1/projects/${projectId}/description`, { text });
  }

  validationQueue(projectId: string): Promise<ValidationQueue> {
    return this.request("GET", `/v1/projects/${projectId}/validation-queue`);
  }

  submitValidationLabels(
    projectId: string,
    labels: { image_id: string; label: Label }[],
  ): Promise<LabelCounts> {
    return this.request("POST", `/v1/projects/${projectId}/validation-labels`, { labels });
  }

  runStrategySelection(projectId: string): Promise<StrategyTable> {
    return this.request("POST", `/v1/projects/${projectId}/strategy-selection`, {});
  }

  strategies(projectId: string): Promise<StrategyTable> {
    return this.request("GET", `/v1/projects/${projectId}/strategies`);
  }

  annotations(projectId: string, page: number, pageSize: number): Promise<AnnotationPage> {
    return this.request(
      "GET",
      `/v1/projects/${projectId}/annotations?page=${page}&page_size=${pageSize}`,
    );
  }

  runAlRound(projectId: string, sampler: string, n: number): Promise<{ v: number; round: unknown }> {
    return this.request("POST", `/v1/projects/${projectId}/al-round`, { sampler, n });
  }

  rounds(projectId: string): Promise<RoundsResponse> {
    return this.request("GET", `/v1/projects/${projectId}/rounds`);
  }
}
