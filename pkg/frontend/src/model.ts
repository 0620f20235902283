/** Session-state models for the configuration UI. Pure logic, no DOM. */

import { validateConfigDoc } from "./validate.js";
import { parse } from "yaml";

/** Fixed-capacity ring of detection-rate samples (newest last). */
export class RateRing {
  private readonly buf: number[] = [];

  constructor(readonly capacity = 600) {
    if (capacity < 1) throw new Error("capacity must be >= 1");
  }

  push(rate: number): void {
    this.buf.push(rate);
    if (this.buf.length > this.capacity) {
      this.buf.splice(0, this.buf.length - this.capacity);
    }
  }

  /** Samples oldest-to-newest, at most `capacity` of them. */
  series(): number[] {
    return this.buf.slice();
  }

  get length(): number {
    return this.buf.length;
  }

  get latest(): number | undefined {
    return this.buf[this.buf.length - 1];
  }
}

export interface TopologyResult {
  line0: [number, number];
  line1: [number, number];
}

/** Four-click topology editor: first pair (TL, TR) becomes line0, second
 * pair (BL, BR) becomes line1. Selecting the same mass twice is rejected. */
export class TopologyDraft {
  readonly picks: number[] = [];
  hint: string | null = null;

  /** Add one mass selection; returns true if accepted. */
  pick(classId: number): boolean {
    if (this.complete) {
      this.hint = "topology already has 4 slots; reset to start over";
      return false;
    }
    if (this.picks.includes(classId)) {
      this.hint = `class ${classId} already selected; pick a different mass`;
      return false;
    }
    this.picks.push(classId);
    this.hint = null;
    return true;
  }

  get complete(): boolean {
    return this.picks.length === 4;
  }

  /** The drafted topology, or null while incomplete. */
  result(): TopologyResult | null {
    if (!this.complete) return null;
    return {
      line0: [this.picks[0], this.picks[1]],
      line1: [this.picks[2], this.picks[3]],
    };
  }

  reset(): void {
    this.picks.length = 0;
    this.hint = null;
  }
}

/** Editable config draft with dirty-state gating: PUT is offered only when
 * the draft differs from the applied document and validates client-side. */
export class ConfigSession {
  private applied = "";
  private draftText = "";

  /** Record the server's canonical document (after GET or a 200 PUT). */
  setApplied(text: string): void {
    this.applied = text;
    this.draftText = text;
  }

  edit(text: string): void {
    this.draftText = text;
  }

  get draft(): string {
    return this.draftText;
  }

  get dirty(): boolean {
    return this.draftText !== this.applied;
  }

  /** Validation problems for the current draft (parse errors included). */
  errors(): string[] {
    let doc: unknown;
    try {
      doc = parse(this.draftText);
    } catch (e) {
      return [`not valid YAML: ${(e as Error).message}`];
    }
    return validateConfigDoc(doc);
  }

  /** Whether a PUT should be offered right now. */
  get canApply(): boolean {
    return this.dirty && this.errors().length === 0;
  }
}
