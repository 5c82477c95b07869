/** Typed client for the survey backend's JSON endpoints. */

export interface SessionInfo {
  session_id: string;
  total: number;
}

export interface Stimulus {
  utterance_id: string;
  emotion: string;
  kind: string;
  audio_url: string;
  index: number;
  total: number;
}

export interface DoneMarker {
  done: true;
  total?: number;
}

export type NextResponse = Stimulus | DoneMarker;

export interface RatingAck {
  ok: boolean;
  remaining: number;
}

export function isDone(next: NextResponse): next is DoneMarker {
  return (next as DoneMarker).done === true;
}

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

export class DuplicateRatingError extends ApiError {
  constructor() {
    super(409, "already rated");
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class SurveyApi {
  constructor(
    readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  audioUrl(stimulus: Stimulus): string {
    return this.baseUrl + stimulus.audio_url;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchImpl(this.baseUrl + path, init);
    } catch (err) {
      throw new ApiError(0, `backend unreachable: ${err}`);
    }
    if (response.status === 409) {
      throw new DuplicateRatingError();
    }
    if (!response.ok) {
      throw new ApiError(response.status, await response.text());
    }
    return (await response.json()) as T;
  }

  createSession(listenerId: string): Promise<SessionInfo> {
    return this.request<SessionInfo>("/sessions", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ listener_id: listenerId }),
    });
  }

  nextStimulus(sessionId: string): Promise<NextResponse> {
    return this.request<NextResponse>(`/sessions/${sessionId}/next`);
  }

  submitRating(sessionId: string, utteranceId: string, score: number): Promise<RatingAck> {
    return this.request<RatingAck>(`/sessions/${sessionId}/ratings`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ utterance_id: utteranceId, score }),
    });
  }

  async fetchReport(): Promise<Record<string, { mean: number; ci95: number; n: number }>> {
    return this.request("/report");
  }
}
