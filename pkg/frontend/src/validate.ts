/** Client-side legality rules for answers and payload schemas. These
 * mirror the service's own validation exactly: the UI must be unable to
 * construct an answer the server would reject. */

import type { Choice, Payload, Question, TaskKind } from "./types.js";

/** The selectable choices for a task, in display order. Tasks 2 and 3
 * use class indices; "none" is the no-preference arm, absent on task 3. */
export function legalChoices(task: TaskKind, nClasses: number): Choice[] {
  if (task === 1) return ["A", "B", "none"];
  const classes: Choice[] = [];
  for (let i = 0; i < nClasses; i++) classes.push(i);
  return task === 2 ? [...classes, "none"] : classes;
}

export function isLegalChoice(
  task: TaskKind,
  choice: Choice,
  nClasses: number,
): boolean {
  return legalChoices(task, nClasses).some((c) => c === choice);
}

/** No-preference carries no confidence arm; every other choice needs an
 * explicit confident / not-confident selection. */
export function requiresConfidence(choice: Choice): boolean {
  return choice !== "none";
}

/** Whether a (choice, confidence) selection is complete and legal. */
export function canSubmit(
  task: TaskKind,
  choice: Choice | null,
  confident: boolean | null,
  nClasses: number,
): boolean {
  if (choice === null) return false;
  if (!isLegalChoice(task, choice, nClasses)) return false;
  if (requiresConfidence(choice) && confident === null) return false;
  return true;
}

function isFragment(f: unknown): boolean {
  if (typeof f !== "object" || f === null) return false;
  const o = f as Record<string, unknown>;
  return (
    typeof o.start === "number" &&
    typeof o.count === "number" &&
    typeof o.char_start === "number" &&
    typeof o.char_end === "number" &&
    typeof o.text === "string"
  );
}

function isStringList(v: unknown): v is string[] {
  return Array.isArray(v) && v.every((s) => typeof s === "string");
}

/** Schema problems with a payload, empty when it is renderable. Extra
 * fields are tolerated but never rendered. */
export function payloadProblems(task: TaskKind, payload: unknown): string[] {
  const problems: string[] = [];
  if (typeof payload !== "object" || payload === null) {
    return ["payload is not an object"];
  }
  const p = payload as Record<string, unknown>;
  if (task === 1) {
    if (typeof p.text !== "string") problems.push("missing text");
    if (typeof p.predicted_class !== "string") {
      problems.push("missing predicted_class");
    }
    for (const side of ["evidence_a", "evidence_b"]) {
      const v = p[side];
      if (!Array.isArray(v) || !v.every(isFragment)) {
        problems.push(`bad ${side}`);
      }
    }
  } else if (task === 2) {
    if (!isStringList(p.evidence)) problems.push("bad evidence");
  } else {
    if (typeof p.predicted_class !== "string") {
      problems.push("missing predicted_class");
    }
    const prob = p.p;
    if (!Array.isArray(prob) || !prob.every((x) => typeof x === "number")) {
      problems.push("bad p");
    }
    if (!isStringList(p.evidence)) problems.push("bad evidence");
    if (!isStringList(p.counter_evidence)) {
      problems.push("bad counter_evidence");
    }
  }
  return problems;
}

export function isRenderable(q: Question): boolean {
  return payloadProblems(q.task, q.payload).length === 0;
}

/** Parse a DOM control value back into a wire choice. */
export function choiceFromValue(task: TaskKind, value: string): Choice {
  if (value === "none" || task === 1) return value as Choice;
  return Number(value);
}

export type { Payload };
