import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";
import type { AnswerBody } from "../src/types.js";

const answer: AnswerBody = {
  question_id: "t2-doc0-lime",
  rater_id: "r1",
  choice: 1,
  confident: true,
};

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

describe("submit retry semantics", () => {
  it("retries the identical request after a network failure", async () => {
    const seen: string[] = [];
    let calls = 0;
    const api = new ApiClient("http://svc", (input, init) => {
      calls += 1;
      if (calls === 1) return Promise.reject(new TypeError("socket reset"));
      seen.push(String(init?.body));
      return Promise.resolve(
        jsonResponse(200, { status: "ok", answered: 1, bank_size: 30 }),
      );
    });
    const ack = await api.submitAnswer(answer);
    expect(ack.answered).toBe(1);
    expect(calls).toBe(2);
    expect(JSON.parse(seen[0])).toEqual(answer);
  });

  it("reads duplicate-after-retry as a lost acknowledgment", async () => {
    let calls = 0;
    const api = new ApiClient("http://svc", () => {
      calls += 1;
      if (calls === 1) return Promise.reject(new TypeError("socket reset"));
      return Promise.resolve(
        jsonResponse(409, { status: "error", reason: "duplicate submission" }),
      );
    });
    const ack = await api.submitAnswer(answer);
    expect(ack.status).toBe("ok");
  });

  it("a first-attempt duplicate is a real error", async () => {
    const api = new ApiClient("http://svc", () =>
      Promise.resolve(
        jsonResponse(409, { status: "error", reason: "duplicate submission" }),
      ),
    );
    await expect(api.submitAnswer(answer)).rejects.toThrowError(ApiError);
  });

  it("rejections carry the server's reason", async () => {
    const api = new ApiClient("http://svc", () =>
      Promise.resolve(
        jsonResponse(400, {
          status: "error",
          reason: "task 3 does not allow no-preference",
        }),
      ),
    );
    const err = await api.submitAnswer(answer).catch((e) => e as ApiError);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(400);
    expect((err as ApiError).reason).toContain("no-preference");
  });

  it("gives up after exhausting retries", async () => {
    let calls = 0;
    const api = new ApiClient("http://svc", () => {
      calls += 1;
      return Promise.reject(new TypeError("socket reset"));
    });
    await expect(api.submitAnswer(answer, 2)).rejects.toThrow("socket reset");
    expect(calls).toBe(3);
  });
});
