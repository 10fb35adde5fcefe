/** DOM construction for the three question views. Rendering is strictly
 * whitelist-based: only the documented payload fields of each task are
 * read, so stray keys in a response can never reach the page. All
 * payload content enters through textContent, never through markup. */

import type {
  Fragment,
  Question,
  Task1Payload,
  Task2Payload,
  Task3Payload,
  TaskKind,
} from "./types.js";
import { legalChoices, payloadProblems } from "./validate.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

/** Session chrome: title, answered/total progress, and the slot the
 * current question renders into. Progress never breaks down by task or
 * method. */
export function renderShell(root: HTMLElement, bankSize: number): void {
  root.textContent = "";
  const header = el("header", "survey-header");
  header.appendChild(el("h1", undefined, "Rating session"));
  const progress = el("span", "progress");
  progress.dataset.role = "progress";
  progress.textContent = `0 / ${bankSize}`;
  header.appendChild(progress);
  root.appendChild(header);
  const slot = el("section", "question-slot");
  slot.dataset.role = "question-slot";
  root.appendChild(slot);
}

export function updateProgress(
  root: HTMLElement,
  answered: number,
  total: number,
): void {
  const node = root.querySelector<HTMLElement>('[data-role="progress"]');
  if (node) node.textContent = `${answered} / ${total}`;
}

function slotOf(root: HTMLElement): HTMLElement {
  const slot = root.querySelector<HTMLElement>('[data-role="question-slot"]');
  if (!slot) throw new Error("renderShell must run first");
  return slot;
}

/** Full text with each model's fragments marked. Overlap is resolved
 * per character, so a region claimed by both models carries both
 * styles and stays visually distinguishable. */
function highlightedText(
  text: string,
  evidenceA: Fragment[],
  evidenceB: Fragment[],
): HTMLElement {
  const flags = new Uint8Array(text.length);
  const paint = (fragments: Fragment[], bit: number) => {
    for (const f of fragments) {
      const lo = Math.max(0, f.char_start);
      const hi = Math.min(text.length, f.char_end);
      for (let i = lo; i < hi; i++) flags[i] |= bit;
    }
  };
  paint(evidenceA, 1);
  paint(evidenceB, 2);
  const box = el("p", "doc-text");
  let runStart = 0;
  for (let i = 1; i <= text.length; i++) {
    if (i === text.length || flags[i] !== flags[runStart]) {
      const chunk = text.slice(runStart, i);
      const kind = flags[runStart];
      if (kind === 0) {
        box.appendChild(document.createTextNode(chunk));
      } else {
        const classes = [];
        if (kind & 1) classes.push("hl-a");
        if (kind & 2) classes.push("hl-b");
        box.appendChild(el("mark", classes.join(" "), chunk));
      }
      runStart = i;
    }
  }
  return box;
}

function fragmentChips(texts: string[], className: string): HTMLElement {
  const list = el("ul", "chips");
  for (const text of texts) {
    list.appendChild(el("li", `chip ${className}`, text));
  }
  return list;
}

function choiceLabel(
  task: TaskKind,
  choice: string | number,
  classes: string[],
  probabilities?: number[],
): string {
  if (choice === "none") return "No preference";
  if (task === 1) return `Model ${choice}`;
  const idx = choice as number;
  const name = classes[idx] ?? `class ${idx}`;
  if (probabilities !== undefined && probabilities[idx] !== undefined) {
    return `${name} · p = ${probabilities[idx].toFixed(2)}`;
  }
  return name;
}

/** Choice radios plus the confidence arm and submit button. The
 * confidence radios exist for every task; the controller disables them
 * while no-preference is selected. */
function answerControls(
  task: TaskKind,
  classes: string[],
  probabilities?: number[],
): HTMLElement {
  const form = el("form", "answer-form");
  form.dataset.role = "answer-form";
  form.addEventListener("submit", (e) => e.preventDefault());

  const choiceBox = el("fieldset", "choices");
  choiceBox.appendChild(el("legend", undefined, "Your answer"));
  for (const choice of legalChoices(task, classes.length)) {
    const label = el("label", "choice-option");
    const input = el("input");
    input.type = "radio";
    input.name = "choice";
    input.value = String(choice);
    label.appendChild(input);
    label.appendChild(
      el("span", undefined, choiceLabel(task, choice, classes, probabilities)),
    );
    choiceBox.appendChild(label);
  }
  form.appendChild(choiceBox);

  const confBox = el("fieldset", "confidence");
  confBox.dataset.role = "confidence";
  confBox.appendChild(el("legend", undefined, "How sure are you?"));
  for (const [value, text] of [
    ["yes", "I am confident"],
    ["no", "I am not confident"],
  ] as const) {
    const label = el("label", "confidence-option");
    const input = el("input");
    input.type = "radio";
    input.name = "confidence";
    input.value = value;
    label.appendChild(input);
    label.appendChild(el("span", undefined, text));
    confBox.appendChild(label);
  }
  form.appendChild(confBox);

  const submit = el("button", "submit", "Submit answer");
  submit.type = "submit";
  submit.dataset.role = "submit";
  submit.disabled = true;
  form.appendChild(submit);

  const note = el("p", "rejection");
  note.dataset.role = "rejection";
  note.hidden = true;
  form.appendChild(note);
  return form;
}

function renderTask1(slot: HTMLElement, payload: Task1Payload,
                     classes: string[]): void {
  slot.appendChild(
    el("p", "prompt",
       `Both models predict: ${payload.predicted_class}. Each model ` +
       `highlights the words it found most important. Which model is ` +
       `more reasonable?`),
  );
  const legend = el("p", "hl-legend");
  legend.appendChild(el("mark", "hl-a", "Model A"));
  legend.appendChild(document.createTextNode(" "));
  legend.appendChild(el("mark", "hl-b", "Model B"));
  slot.appendChild(legend);
  slot.appendChild(
    highlightedText(payload.text, payload.evidence_a, payload.evidence_b),
  );
  slot.appendChild(answerControls(1, classes));
}

function renderTask2(slot: HTMLElement, payload: Task2Payload,
                     classes: string[]): void {
  slot.appendChild(
    el("p", "prompt",
       "A model classified a document you cannot see. It points to the " +
       "following words as its evidence. Which class did it predict?"),
  );
  slot.appendChild(fragmentChips(payload.evidence, "chip-evidence"));
  slot.appendChild(answerControls(2, classes));
}

function renderTask3(slot: HTMLElement, payload: Task3Payload,
                     classes: string[]): void {
  slot.appendChild(
    el("p", "prompt",
       `The model is unsure about a document you cannot see: it leans ` +
       `${payload.predicted_class}. Given its evidence for and against, ` +
       `which class do you think is actually correct?`),
  );
  const forBox = el("div", "evidence-block");
  forBox.appendChild(el("h2", undefined, "Evidence for"));
  forBox.appendChild(fragmentChips(payload.evidence, "chip-evidence"));
  slot.appendChild(forBox);
  const againstBox = el("div", "evidence-block");
  againstBox.appendChild(el("h2", undefined, "Evidence against"));
  againstBox.appendChild(
    fragmentChips(payload.counter_evidence, "chip-counter"),
  );
  slot.appendChild(againstBox);
  slot.appendChild(answerControls(3, classes, payload.p));
}

/** Render a question into the shell's slot, or an error view (with no
 * controls, so nothing can be submitted) when the payload does not
 * match its task's schema. Returns whether controls were rendered. */
export function renderQuestion(
  root: HTMLElement,
  question: Question,
  classes: string[],
): boolean {
  const slot = slotOf(root);
  slot.textContent = "";
  const problems = payloadProblems(question.task, question.payload);
  if (problems.length > 0) {
    const box = el("div", "error-view");
    box.dataset.role = "error";
    box.appendChild(el("p", undefined, "This question cannot be displayed:"));
    const list = el("ul");
    for (const p of problems) list.appendChild(el("li", undefined, p));
    box.appendChild(list);
    slot.appendChild(box);
    return false;
  }
  if (question.task === 1) {
    renderTask1(slot, question.payload as Task1Payload, classes);
  } else if (question.task === 2) {
    renderTask2(slot, question.payload as Task2Payload, classes);
  } else {
    renderTask3(slot, question.payload as Task3Payload, classes);
  }
  return true;
}

export function renderDone(root: HTMLElement, answered: number): void {
  const slot = slotOf(root);
  slot.textContent = "";
  const box = el("div", "done-view");
  box.dataset.role = "done";
  box.appendChild(el("h2", undefined, "All done"));
  box.appendChild(
    el("p", undefined,
       `You answered ${answered} questions. Thank you for taking part.`),
  );
  slot.appendChild(box);
}

/** Surface a server rejection under the form without touching the
 * rater's current selection. */
export function showRejection(root: HTMLElement, reason: string): void {
  const note = root.querySelector<HTMLElement>('[data-role="rejection"]');
  if (note) {
    note.textContent = reason;
    note.hidden = false;
  }
}

export function clearRejection(root: HTMLElement): void {
  const note = root.querySelector<HTMLElement>('[data-role="rejection"]');
  if (note) {
    note.textContent = "";
    note.hidden = true;
  }
}
