/** Wire types for the study service. These mirror the JSON bodies of
 * GET /session, GET /questions/next, POST /answers, and GET /results;
 * the client has no other view of the backend. */

export type TaskKind = 1 | 2 | 3;

/** A highlighted fragment inside the presented text (task 1). Token
 * span plus resolved character range and display text. */
export interface Fragment {
  start: number;
  count: number;
  char_start: number;
  char_end: number;
  text: string;
}

/** Task 1: full text, the shared prediction, and each model's top
 * evidence under blinded A/B labels. */
export interface Task1Payload {
  text: string;
  predicted_class: string;
  evidence_a: Fragment[];
  evidence_b: Fragment[];
}

/** Task 2: evidence fragment texts only; the input text never ships. */
export interface Task2Payload {
  evidence: string[];
}

/** Task 3: prediction, class probabilities, and both fragment lists;
 * the input text never ships. */
export interface Task3Payload {
  predicted_class: string;
  p: number[];
  evidence: string[];
  counter_evidence: string[];
}

export type Payload = Task1Payload | Task2Payload | Task3Payload;

export interface Question {
  id: string;
  task: TaskKind;
  payload: Payload;
}

export interface SessionInfo {
  rater_id: string;
  classes: string[];
  tasks: number[];
  bank_size: number;
  raters_per_question: number;
}

export type NextQuestion =
  | { status: "done" }
  | { status: "ok"; question: Question };

/** Task 1 answers name a model or decline; tasks 2 and 3 name a class
 * index, with "none" allowed only on task 2. */
export type Choice = "A" | "B" | "none" | number;

export interface AnswerBody {
  question_id: string;
  rater_id: string;
  choice: Choice;
  confident: boolean;
}

export interface SubmitAck {
  status: "ok";
  answered: number;
  bank_size: number;
}

export interface AnswerRecord {
  question_id: string;
  rater_id: string;
  choice: Choice;
  confident: boolean;
  timestamp: number;
}

export interface ResultsExport {
  answers: AnswerRecord[];
  aggregate: unknown;
}
