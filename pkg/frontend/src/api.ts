/** Thin HTTP client for the study service. The (rater_id, question_id)
 * pair acts as the idempotency token: the server rejects a duplicate
 * with 409, so a submit whose acknowledgment was lost on the wire can
 * be retried safely and the duplicate rejection read back as success. */

import type {
  AnswerBody,
  NextQuestion,
  ResultsExport,
  SessionInfo,
  SubmitAck,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly reason: string,
  ) {
    super(reason);
    this.name = "ApiError";
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function readReason(res: Response): Promise<string> {
  try {
    const body = (await res.json()) as { reason?: string };
    return body.reason ?? `HTTP ${res.status}`;
  } catch {
    return `HTTP ${res.status}`;
  }
}

export class ApiClient {
  private readonly fetchFn: FetchLike;

  constructor(
    private readonly base: string,
    fetchFn?: FetchLike,
  ) {
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  private async getJson<T>(path: string): Promise<T> {
    const res = await this.fetchFn(this.base + path);
    if (!res.ok) throw new ApiError(res.status, await readReason(res));
    return (await res.json()) as T;
  }

  session(): Promise<SessionInfo> {
    return this.getJson<SessionInfo>("/session");
  }

  nextQuestion(raterId: string, task?: number): Promise<NextQuestion> {
    const params = new URLSearchParams({ rater: raterId });
    if (task !== undefined) params.set("task", String(task));
    return this.getJson<NextQuestion>(`/questions/next?${params}`);
  }

  results(): Promise<ResultsExport> {
    return this.getJson<ResultsExport>("/results");
  }

  /** Submit one answer. Network failures retry the identical request;
   * if a retry then reports "duplicate submission", the original
   * attempt committed and the submit is treated as acknowledged. */
  async submitAnswer(body: AnswerBody, retries = 2): Promise<SubmitAck> {
    let networkFailures = 0;
    for (;;) {
      let res: Response;
      try {
        res = await this.fetchFn(this.base + "/answers", {
          method: "POST",
          headers: { "content-type": "application/json" },
          body: JSON.stringify(body),
        });
      } catch (err) {
        if (networkFailures >= retries) throw err;
        networkFailures += 1;
        continue;
      }
      if (res.ok) return (await res.json()) as SubmitAck;
      const reason = await readReason(res);
      if (
        res.status === 409 &&
        networkFailures > 0 &&
        reason.includes("duplicate")
      ) {
        return { status: "ok", answered: -1, bank_size: -1 };
      }
      throw new ApiError(res.status, reason);
    }
  }
}
