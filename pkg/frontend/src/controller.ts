/** Session flow: fetch a question, render it, gather choice plus
 * confidence, submit, advance. One in-flight submission at most; the
 * next question is fetched only after the previous acknowledgment.
 * Every state change fires a "survey:state" CustomEvent on the root so
 * automation and tests can follow along without private hooks. */

import { ApiClient, ApiError } from "./api.js";
import {
  clearRejection,
  renderDone,
  renderQuestion,
  renderShell,
  showRejection,
  updateProgress,
} from "./render.js";
import type { Choice, Question, SessionInfo } from "./types.js";
import { canSubmit, choiceFromValue } from "./validate.js";

export type SurveyState =
  | { kind: "question"; questionId: string }
  | { kind: "error"; questionId: string }
  | { kind: "rejected"; questionId: string; reason: string }
  | { kind: "done"; answered: number };

export class SessionController {
  private session: SessionInfo | null = null;
  private current: Question | null = null;
  private choice: Choice | null = null;
  private confident: boolean | null = null;
  private answered = 0;
  private inFlight = false;

  constructor(
    private readonly api: ApiClient,
    private readonly root: HTMLElement,
  ) {}

  async start(): Promise<void> {
    this.session = await this.api.session();
    renderShell(this.root, this.session.bank_size);
    await this.advance();
  }

  private emit(state: SurveyState): void {
    this.root.dispatchEvent(
      new CustomEvent<SurveyState>("survey:state", { detail: state }),
    );
  }

  private async advance(): Promise<void> {
    const session = this.session;
    if (!session) throw new Error("start() must run first");
    const res = await this.api.nextQuestion(session.rater_id);
    if (res.status === "done") {
      this.current = null;
      renderDone(this.root, this.answered);
      this.emit({ kind: "done", answered: this.answered });
      return;
    }
    this.current = res.question;
    this.choice = null;
    this.confident = null;
    const rendered = renderQuestion(this.root, res.question, session.classes);
    if (!rendered) {
      this.emit({ kind: "error", questionId: res.question.id });
      return;
    }
    this.wireControls();
    this.emit({ kind: "question", questionId: res.question.id });
  }

  private controls() {
    const form = this.root.querySelector<HTMLFormElement>(
      '[data-role="answer-form"]',
    );
    if (!form) throw new Error("no answer form in the document");
    return {
      form,
      submit: form.querySelector<HTMLButtonElement>('[data-role="submit"]')!,
      confidenceInputs: Array.from(
        form.querySelectorAll<HTMLInputElement>('input[name="confidence"]'),
      ),
    };
  }

  private wireControls(): void {
    const { form, submit } = this.controls();
    form.addEventListener("change", (event) => {
      const target = event.target as HTMLInputElement;
      if (target.name === "choice") this.onChoice(target.value);
      if (target.name === "confidence") {
        this.confident = target.value === "yes";
      }
      this.refreshSubmit();
    });
    submit.addEventListener("click", () => {
      void this.submit();
    });
  }

  private onChoice(value: string): void {
    const question = this.current;
    if (!question) return;
    this.choice = choiceFromValue(question.task, value);
    const { confidenceInputs } = this.controls();
    const disabled = this.choice === "none";
    for (const input of confidenceInputs) {
      input.disabled = disabled;
      if (disabled) input.checked = false;
    }
    if (disabled) this.confident = null;
  }

  private refreshSubmit(): void {
    const question = this.current;
    const session = this.session;
    if (!question || !session) return;
    const { submit } = this.controls();
    submit.disabled =
      this.inFlight ||
      !canSubmit(
        question.task,
        this.choice,
        this.confident,
        session.classes.length,
      );
  }

  private async submit(): Promise<void> {
    const question = this.current;
    const session = this.session;
    if (!question || !session || this.inFlight || this.choice === null) return;
    if (
      !canSubmit(question.task, this.choice, this.confident,
                 session.classes.length)
    ) {
      return;
    }
    this.inFlight = true;
    this.refreshSubmit();
    clearRejection(this.root);
    try {
      await this.api.submitAnswer({
        question_id: question.id,
        rater_id: session.rater_id,
        choice: this.choice,
        confident: this.confident ?? false,
      });
      this.answered += 1;
      updateProgress(this.root, this.answered, session.bank_size);
      this.inFlight = false;
      await this.advance();
    } catch (err) {
      this.inFlight = false;
      this.refreshSubmit();
      const reason = err instanceof ApiError ? err.reason : String(err);
      showRejection(this.root, reason);
      this.emit({ kind: "rejected", questionId: question.id, reason });
    }
  }
}
