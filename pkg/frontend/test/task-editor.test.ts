/**
 * The editor is the only path to a label payload, and it cannot express a
 * slot/token misalignment: property-tested with random operation sequences
 * whose every output must satisfy the service schema.
 */

import { describe, expect, it } from "vitest";

import type { TaskPayload } from "../src/api.js";
import { TaskEditor } from "../src/task-editor.js";
import { STUB_VOCAB } from "./stub-server.js";

function task(tokens: string[], slots?: string[]): TaskPayload {
  return {
    id: 1,
    tokens,
    suggested_intent: "get_weather",
    suggested_slots: slots ?? tokens.map(() => "O"),
    conf_int: -0.5,
    conf_slot: -0.3,
    conf_joint: -0.8,
    rank: 0,
    status: "assigned",
  };
}

describe("task editor invariants", () => {
  it("pre-fills suggestions and pre-selects the suggested intent", () => {
    const editor = new TaskEditor(task(["play", "jazz"], ["O", "B-genre"]), STUB_VOCAB);
    expect(editor.currentIntent).toBe("get_weather");
    expect(editor.currentTags()).toEqual(["O", "B-genre"]);
    expect(editor.isComplete()).toBe(true);
  });

  it("rejects out-of-range token indices", () => {
    const editor = new TaskEditor(task(["a", "b"]), STUB_VOCAB);
    expect(() => editor.setTag(2, "O")).toThrowError(RangeError);
    expect(() => editor.setTag(-1, "O")).toThrowError(RangeError);
    expect(() => editor.setTag(0.5, "O")).toThrowError(RangeError);
  });

  it("rejects tags and intents outside the vocabulary", () => {
    const editor = new TaskEditor(task(["a", "b"]), STUB_VOCAB);
    expect(() => editor.setTag(0, "B-made-up")).toThrowError(/unknown slot tag/);
    expect(() => editor.setIntent("made_up")).toThrowError(/unknown intent/);
  });

  it("refuses to build an incomplete payload", () => {
    const bogus = task(["a", "b"]);
    bogus.suggested_intent = "not_in_vocab"; // nothing pre-selected
    const editor = new TaskEditor(bogus, STUB_VOCAB);
    expect(editor.isComplete()).toBe(false);
    expect(() => editor.buildPayload()).toThrowError(/incomplete/);
    editor.setIntent("play_music");
    expect(editor.buildPayload().intent).toBe("play_music");
  });

  it("rejects server tasks whose suggestions are already misaligned", () => {
    expect(() => new TaskEditor(task(["a", "b"], ["O"]), STUB_VOCAB)).toThrowError(
      /2 tokens/,
    );
  });

  it("misalignment is unconstructible under random operation sequences", () => {
    // deterministic LCG so the property run is reproducible
    let state = 42;
    const rand = () => {
      state = (state * 1103515245 + 12345) % 2147483648;
      return state / 2147483648;
    };
    const tokensPool = ["show", "flights", "to", "boston", "please"];
    for (let round = 0; round < 200; round += 1) {
      const n = 1 + Math.floor(rand() * 5);
      const tokens = Array.from(
        { length: n },
        () => tokensPool[Math.floor(rand() * tokensPool.length)]!,
      );
      const editor = new TaskEditor(task(tokens), STUB_VOCAB);
      const ops = 1 + Math.floor(rand() * 12);
      for (let k = 0; k < ops; k += 1) {
        const dice = rand();
        try {
          if (dice < 0.5) {
            const index = Math.floor(rand() * (n + 2)) - 1; // sometimes invalid
            const tag =
              STUB_VOCAB.slot_tags[Math.floor(rand() * STUB_VOCAB.slot_tags.length)]!;
            editor.setTag(index, tag);
          } else if (dice < 0.75) {
            editor.setIntent(
              STUB_VOCAB.intents[Math.floor(rand() * STUB_VOCAB.intents.length)]!,
            );
          } else {
            editor.acceptSuggestions();
          }
        } catch {
          // invalid operations must throw and change nothing
        }
        const payloadTags = editor.currentTags();
        expect(payloadTags).toHaveLength(tokens.length);
        expect(payloadTags.every((t) => STUB_VOCAB.slot_tags.includes(t))).toBe(true);
      }
      const payload = editor.buildPayload();
      expect(payload.slots).toHaveLength(tokens.length);
      expect(STUB_VOCAB.intents).toContain(payload.intent);
    }
  });
});
