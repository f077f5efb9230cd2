/**
 * Editable view over one annotation task.
 *
 * The tag array is created once with exactly one entry per token and only
 * single-slot writes are exposed, so a payload whose tag count differs from
 * the token count cannot be constructed through this class.  Intent and tag
 * writes are validated against the service vocabulary up front.
 */

import type { LabelPayload, TaskPayload, VocabPayload } from "./api.js";

export interface FieldErrors {
  [field: string]: string;
}

export class TaskEditor {
  readonly taskId: number;
  readonly tokens: readonly string[];
  readonly suggestedIntent: string;
  readonly suggestedSlots: readonly string[];
  readonly confInt: number;
  readonly confSlot: number;
  readonly confJoint: number | null;
  readonly rank: number;

  private readonly intents: ReadonlySet<string>;
  private readonly palette: ReadonlySet<string>;
  private readonly tags: string[];
  private intent: string | null;
  /** Server-reported problems from the last rejected submission, if any. */
  fieldErrors: FieldErrors = {};

  constructor(task: TaskPayload, vocab: VocabPayload) {
    if (task.suggested_slots.length !== task.tokens.length) {
      throw new Error(
        `task ${task.id}: server sent ${task.suggested_slots.length} suggestions ` +
          `for ${task.tokens.length} tokens`,
      );
    }
    this.taskId = task.id;
    this.tokens = Object.freeze([...task.tokens]);
    this.suggestedIntent = task.suggested_intent;
    this.suggestedSlots = Object.freeze([...task.suggested_slots]);
    this.confInt = task.conf_int;
    this.confSlot = task.conf_slot;
    this.confJoint = task.conf_joint;
    this.rank = task.rank;
    this.intents = new Set(vocab.intents);
    this.palette = new Set(vocab.slot_tags);

    // pickers come pre-filled with the model's suggestions
    this.tags = [...task.suggested_slots];
    this.intent = this.intents.has(task.suggested_intent)
      ? task.suggested_intent
      : null;
  }

  get currentIntent(): string | null {
    return this.intent;
  }

  tagAt(index: number): string {
    const tag = this.tags[index];
    if (tag === undefined) {
      throw new RangeError(`token index ${index} outside 0..${this.tags.length - 1}`);
    }
    return tag;
  }

  currentTags(): readonly string[] {
    return [...this.tags];
  }

  setIntent(intent: string): void {
    if (!this.intents.has(intent)) {
      throw new Error(`unknown intent ${JSON.stringify(intent)}`);
    }
    this.intent = intent;
  }

  setTag(index: number, tag: string): void {
    if (!Number.isInteger(index) || index < 0 || index >= this.tags.length) {
      throw new RangeError(`token index ${index} outside 0..${this.tags.length - 1}`);
    }
    if (!this.palette.has(tag)) {
      throw new Error(`unknown slot tag ${JSON.stringify(tag)}`);
    }
    this.tags[index] = tag;
  }

  /** One-keystroke flow: take every model suggestion as-is. */
  acceptSuggestions(): void {
    for (let i = 0; i < this.suggestedSlots.length; i += 1) {
      const tag = this.suggestedSlots[i]!;
      if (this.palette.has(tag)) {
        this.tags[i] = tag;
      }
    }
    if (this.intents.has(this.suggestedIntent)) {
      this.intent = this.suggestedIntent;
    }
  }

  /** Submission stays disabled until the intent and every tag are chosen. */
  isComplete(): boolean {
    return this.intent !== null && this.tags.every((t) => this.palette.has(t));
  }

  buildPayload(): LabelPayload {
    if (!this.isComplete()) {
      throw new Error(`task ${this.taskId}: annotation incomplete`);
    }
    return { intent: this.intent!, slots: [...this.tags] };
  }
}
